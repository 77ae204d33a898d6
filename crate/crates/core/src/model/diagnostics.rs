//! Introspection of one forward pass: attention maps, per-layer residual
//! contribution magnitudes and the predicted pace histogram.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::input::ModelInput;
use super::params::Params;
use super::transformer::forward;
use super::ModelConfig;
use crate::error::Result;
use crate::grammar::{EncodedWindow, Vocabulary};
use crate::scalar::Scalar;
use crate::soft_targets::softmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub layer: usize,
    pub head: usize,
    /// `weights[query][key]` over the real positions; masked entries are 0.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerContribution {
    pub layer: usize,
    /// Mean L2 norm over positions of the attention update.
    pub attention: f64,
    /// Mean L2 norm over positions of the feed-forward update.
    pub feed_forward: f64,
    /// Mean L2 norm of the residual stream entering the layer.
    pub residual_in: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub runner_id: String,
    pub target_index: usize,
    pub tokens: Vec<String>,
    pub prediction_position: usize,
    pub attention: Vec<AttentionMap>,
    pub contributions: Vec<LayerContribution>,
    pub bin_edges: Vec<f64>,
    pub probs: Vec<f64>,
    pub label_value: f64,
}

fn mean_row_norm<T: Scalar>(x: &[T], d: usize) -> f64 {
    let rows = x.len() / d;
    let total: f64 = x
        .chunks(d)
        .map(|r| r.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt())
        .sum();
    total / rows as f64
}

pub fn dump_diagnostics<T: Scalar>(
    params: &Params<T>,
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    window: &EncodedWindow,
) -> Result<Diagnostics> {
    let input = ModelInput::<T>::from_window(window, vocab, cfg, None)?;
    let (logits, cache) = forward::<T, ChaCha8Rng>(params, cfg, &input, window.prediction_position, None)?;
    let n = cache.n;
    let d = cfg.d_model;
    let mut attention = Vec::new();
    let mut contributions = Vec::new();
    for (l, lc) in cache.layers.iter().enumerate() {
        for head in 0..cfg.n_heads {
            let weights = (0..n)
                .map(|t| lc.probs[(head * n + t) * n..(head * n + t + 1) * n].iter().map(|v| v.as_f64()).collect())
                .collect();
            attention.push(AttentionMap { layer: l, head, weights });
        }
        contributions.push(LayerContribution {
            layer: l,
            attention: mean_row_norm(&lc.attn_update, d),
            feed_forward: mean_row_norm(&lc.ffn_update, d),
            residual_in: mean_row_norm(&lc.x_in, d),
        });
    }
    let probs = softmax(&logits).iter().map(|v| v.as_f64()).collect();
    Ok(Diagnostics {
        runner_id: window.runner_id.clone(),
        target_index: window.target_index,
        tokens: window.real_tokens().iter().map(|&id| vocab.label(id)).collect(),
        prediction_position: window.prediction_position,
        attention,
        contributions,
        bin_edges: vocab.pace_bins()?.edges.clone(),
        probs,
        label_value: window.label_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{Ablation, SplitRatios};
    use crate::model::InputEmbedding;
    use crate::pipeline::{layout, prepare, BinningConfig, GrammarConfig};
    use crate::synthdata::{generate, GeneratorConfig};

    #[test]
    fn maps_are_causal_distributions_and_histogram_sums_to_one() {
        let (h, _) = generate(&GeneratorConfig { n_runners: 60, seed: 2, ..Default::default() }).unwrap();
        let p = prepare(h, &SplitRatios::default(), 2, &BinningConfig::default(), &GrammarConfig::default(), layout(6, Ablation::None, 2))
            .unwrap();
        let window = p.train.windows.iter().max_by_key(|w| w.real_len).unwrap();
        for embedding in [InputEmbedding::Discrete, InputEmbedding::SoftGaussian { sigma_floor: 2.7, k: 1.5 }] {
            let cfg = ModelConfig {
                input_embedding: embedding,
                ..ModelConfig::tiny(p.vocab.size as usize, p.pace_bins().len(), p.layout.capacity())
            };
            let params = Params::<f64>::init(&cfg, 1);
            let d = dump_diagnostics(&params, &cfg, &p.vocab, window).unwrap();
            assert_eq!(d.tokens.len(), window.real_len);
            assert_eq!(d.attention.len(), cfg.n_layers * cfg.n_heads);
            for m in &d.attention {
                for (q, row) in m.weights.iter().enumerate() {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(row[q + 1..].iter().all(|&w| w == 0.0));
                }
            }
            assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(d.bin_edges.len(), d.probs.len() + 1);
            assert!(d.contributions.iter().all(|c| c.attention > 0.0 && c.feed_forward > 0.0));
        }
    }
}
