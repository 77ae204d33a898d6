//! Model inputs: each position embeds as a weighted sum of embedding rows.
//!
//! Discrete tokens use a single row with weight 1. In soft-Gaussian mode a
//! quantized continuous value `x` embeds as `Σ_i w_i(x)·e_i` over its section's
//! bins, with `w_i(x) ∝ exp(−(x − c_i)² / 2σ_i²)` and adaptive widths `σ_i`.

use super::{InputEmbedding, ModelConfig};
use crate::error::{Error, Result};
use crate::grammar::vocab::{SectionKind, Vocabulary, PAD};
use crate::grammar::EncodedWindow;
use crate::quantizer::BinSpec;
use crate::scalar::Scalar;
use crate::soft_targets::adaptive_sigma;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput<T> {
    /// `(token, weight)` pairs, grouped by position.
    pub entries: Vec<(u32, T)>,
    /// `offsets[t]..offsets[t+1]` indexes the entries of position `t`.
    pub offsets: Vec<usize>,
    /// PAD positions; masked as attention keys.
    pub pad: Vec<bool>,
}

impl<T: Scalar> ModelInput<T> {
    pub fn from_ids(ids: &[u32]) -> Self {
        ModelInput {
            entries: ids.iter().map(|&id| (id, T::one())).collect(),
            offsets: (0..=ids.len()).collect(),
            pad: ids.iter().map(|&id| id == PAD).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pad.is_empty()
    }

    pub fn position(&self, t: usize) -> &[(u32, T)] {
        &self.entries[self.offsets[t]..self.offsets[t + 1]]
    }

    /// Input for a window, truncated to its first `len` tokens (`None`: real tokens only).
    pub fn from_window(window: &EncodedWindow, vocab: &Vocabulary, cfg: &ModelConfig, len: Option<usize>) -> Result<Self> {
        let len = len.unwrap_or(window.real_len).min(window.token_ids.len());
        let ids = &window.token_ids[..len];
        let (sigma_floor, k) = match cfg.input_embedding {
            InputEmbedding::Discrete => return Ok(Self::from_ids(ids)),
            InputEmbedding::SoftGaussian { sigma_floor, k } => (sigma_floor, k),
        };
        let mut input = ModelInput { entries: Vec::with_capacity(len), offsets: vec![0], pad: Vec::with_capacity(len) };
        for (t, &id) in ids.iter().enumerate() {
            let raw = if t < window.real_len { window.continuous.get(t).copied().flatten() } else { None };
            match (raw, vocab.decode(id)) {
                (Some(x), Some((section, _))) => match &section.kind {
                    SectionKind::Quantized { bins } => {
                        let w: Vec<f64> = soft_embed(x, bins, sigma_floor, k)?;
                        input
                            .entries
                            .extend(w.iter().enumerate().map(|(i, &wi)| (section.start + i as u32, T::lit(wi))));
                    }
                    _ => input.entries.push((id, T::one())),
                },
                _ => input.entries.push((id, T::one())),
            }
            input.offsets.push(input.entries.len());
            input.pad.push(id == PAD);
        }
        Ok(input)
    }
}

/// Normalized Gaussian weights of `x` over the bins of `spec`.
pub fn soft_embed<T: Scalar>(x: T, spec: &BinSpec<T>, sigma_floor: T, k: T) -> Result<Vec<T>> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("{}: soft embedding of non-finite value", spec.feature_name)));
    }
    let centers = spec.centers();
    let mut logw = Vec::with_capacity(centers.len());
    for (i, &c) in centers.iter().enumerate() {
        let sigma = adaptive_sigma(spec.bin_width(i)?, sigma_floor, k)?;
        if !(sigma > T::zero()) {
            return Err(Error::invalid(format!("{}: zero smoothing width for bin {i}", spec.feature_name)));
        }
        let z = (x - c) / sigma;
        logw.push(-T::lit(0.5) * z * z);
    }
    let max = logw.iter().copied().fold(T::neg_infinity(), T::max);
    let w: Vec<T> = logw.iter().map(|&l| (l - max).exp()).collect();
    let total: T = w.iter().copied().sum();
    if !(total > T::zero()) || !total.is_finite() {
        return Err(Error::Numerical(format!("{}: soft embedding weights vanished", spec.feature_name)));
    }
    Ok(w.into_iter().map(|v| v / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn three() -> BinSpec<f64> {
        BinSpec::from_edges("x", vec![0.0, 1.0, 2.0, 3.0], 10.0).unwrap()
    }

    #[test]
    fn centre_of_middle_bin() {
        // σ_i ≡ 1: weights ∝ (e^{-1/2}, 1, e^{-1/2})
        let w = soft_embed(1.5, &three(), 1.0, 0.0).unwrap();
        let e = (-0.5f64).exp();
        let expect = [e / (1.0 + 2.0 * e), 1.0 / (1.0 + 2.0 * e), e / (1.0 + 2.0 * e)];
        for (a, b) in w.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((w[0] - 0.274069).abs() < 1e-6 && (w[1] - 0.451863).abs() < 1e-6);
    }

    #[test]
    fn shared_edge_splits_evenly() {
        let spec = BinSpec::<f64>::from_edges("x", vec![0.0, 1.0, 2.0], 10.0).unwrap();
        let w = soft_embed(1.0, &spec, 0.7, 0.0).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn symmetric_about_a_centre() {
        let spec = BinSpec::from_edges("x", (0..=7).map(f64::from).collect(), 10.0).unwrap();
        let w = soft_embed(3.5, &spec, 1.3, 0.4).unwrap();
        for i in 0..3 {
            assert!((w[3 - i - 1] - w[3 + i + 1]).abs() < 1e-15);
        }
    }

    #[test]
    fn vanishing_width_tends_to_one_hot() {
        let w = soft_embed(1.2, &three(), 1e-4, 1e-5).unwrap();
        assert!((w[1] - 1.0).abs() < 1e-12);
        assert!(soft_embed(1.2, &three(), 0.0, 0.0).is_err());
        assert!(soft_embed(f64::NAN, &three(), 1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn weights_normalized(x in -5.0f64..8.0, floor in 0.01f64..4.0, k in 0.0f64..3.0) {
            let spec = BinSpec::from_edges("x", vec![0.0, 0.5, 1.0, 2.5, 3.0], 10.0).unwrap();
            let w = soft_embed(x, &spec, floor, k).unwrap();
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
