use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const INIT_STD: f64 = 0.02;
/// Tensors per transformer layer.
pub(crate) const PER_LAYER: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// Whether decoupled weight decay applies (matrices and embeddings).
    pub decay: bool,
}

impl<T: Scalar> Tensor<T> {
    fn zeros(name: String, shape: Vec<usize>, decay: bool) -> Self {
        let len = shape.iter().product();
        Tensor { name, shape, data: vec![T::zero(); len], decay }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|&v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
    }
}

/// All model weights, in a fixed order:
/// token embedding, then per layer
/// `ln1.g, ln1.b, qkv.w, qkv.b, proj.w, proj.b, ln2.g, ln2.b, ff1.w, ff1.b, ff2.w, ff2.b`,
/// then `ln_f.g, ln_f.b, out.w, out.b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub tensors: Vec<Tensor<T>>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerIdx {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w_qkv: usize,
    pub b_qkv: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_ff1: usize,
    pub b_ff1: usize,
    pub w_ff2: usize,
    pub b_ff2: usize,
}

pub(crate) const TOK_EMB: usize = 0;

pub(crate) fn layer_idx(l: usize) -> LayerIdx {
    let b = 1 + l * PER_LAYER;
    LayerIdx {
        ln1_g: b,
        ln1_b: b + 1,
        w_qkv: b + 2,
        b_qkv: b + 3,
        w_o: b + 4,
        b_o: b + 5,
        ln2_g: b + 6,
        ln2_b: b + 7,
        w_ff1: b + 8,
        b_ff1: b + 9,
        w_ff2: b + 10,
        b_ff2: b + 11,
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct HeadIdx {
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub w_out: usize,
    pub b_out: usize,
}

pub(crate) fn head_idx(n_layers: usize) -> HeadIdx {
    let b = 1 + n_layers * PER_LAYER;
    HeadIdx { lnf_g: b, lnf_b: b + 1, w_out: b + 2, b_out: b + 3 }
}

impl<T: Scalar> Params<T> {
    /// All-zero tensors with the shapes implied by `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, f, v, k) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.pace_bins);
        let mut t = vec![Tensor::zeros("tok_emb".into(), vec![v, d], true)];
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            t.push(Tensor::zeros(p("ln1.g"), vec![d], false));
            t.push(Tensor::zeros(p("ln1.b"), vec![d], false));
            t.push(Tensor::zeros(p("qkv.w"), vec![d, 3 * d], true));
            t.push(Tensor::zeros(p("qkv.b"), vec![3 * d], false));
            t.push(Tensor::zeros(p("proj.w"), vec![d, d], true));
            t.push(Tensor::zeros(p("proj.b"), vec![d], false));
            t.push(Tensor::zeros(p("ln2.g"), vec![d], false));
            t.push(Tensor::zeros(p("ln2.b"), vec![d], false));
            t.push(Tensor::zeros(p("ff1.w"), vec![d, f], true));
            t.push(Tensor::zeros(p("ff1.b"), vec![f], false));
            t.push(Tensor::zeros(p("ff2.w"), vec![f, d], true));
            t.push(Tensor::zeros(p("ff2.b"), vec![d], false));
        }
        t.push(Tensor::zeros("ln_f.g".into(), vec![d], false));
        t.push(Tensor::zeros("ln_f.b".into(), vec![d], false));
        t.push(Tensor::zeros("out.w".into(), vec![d, k], true));
        t.push(Tensor::zeros("out.b".into(), vec![k], false));
        Params { tensors: t }
    }

    /// Seeded init: N(0, 0.02) for matrices and embeddings (residual projections
    /// scaled by `1/sqrt(2·layers)`), unit layer-norm gains, zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let resid_scale = 1.0 / (2.0 * cfg.n_layers as f64).sqrt();
        for t in &mut p.tensors {
            if t.name.ends_with(".g") {
                t.data.fill(T::one());
            } else if t.decay {
                let std = if t.name.ends_with("proj.w") || t.name.ends_with("ff2.w") {
                    INIT_STD * resid_scale
                } else {
                    INIT_STD
                };
                let normal = Normal::new(0.0, std).expect("valid std");
                for v in &mut t.data {
                    *v = T::lit(normal.sample(&mut rng));
                }
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor { name: t.name.clone(), shape: t.shape.clone(), data: vec![T::zero(); t.data.len()], decay: t.decay })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.fill(T::zero());
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v *= s;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().map(|t| t.norm().powi(2)).sum::<f64>().sqrt()
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|t| t.data.iter().any(|v| !v.is_finite()))
            .map(|t| t.name.as_str())
    }

    /// Checks tensor names and shapes against `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let reference = Params::<T>::zeros(cfg);
        if reference.tensors.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "expected {} tensors, found {}",
                reference.tensors.len(),
                self.tensors.len()
            )));
        }
        for (want, got) in reference.tensors.iter().zip(&self.tensors) {
            if want.name != got.name || want.shape != got.shape || got.data.len() != want.data.len() {
                return Err(Error::Config(format!(
                    "tensor mismatch: expected {} {:?}, found {} {:?}",
                    want.name, want.shape, got.name, got.shape
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
                    decay: t.decay,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn layout_indices_match_names() {
        let cfg = ModelConfig::tiny(20, 5, 23);
        let p = Params::<f64>::zeros(&cfg);
        let l1 = layer_idx(1);
        assert_eq!(p.tensors[l1.w_ff2].name, "layer1.ff2.w");
        assert_eq!(p.tensors[l1.ln1_g].name, "layer1.ln1.g");
        let h = head_idx(cfg.n_layers);
        assert_eq!(p.tensors[h.w_out].name, "out.w");
        assert_eq!(p.tensors[h.b_out].shape, vec![5]);
        assert_eq!(p.tensors.len(), 1 + 2 * PER_LAYER + 4);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::tiny(20, 5, 23);
        let a = Params::<f32>::init(&cfg, 1);
        assert_eq!(a, Params::<f32>::init(&cfg, 1));
        assert_ne!(a, Params::<f32>::init(&cfg, 2));
        assert!(a.tensors[layer_idx(0).ln1_g].data.iter().all(|&g| g == 1.0));
        assert!(a.tensors[layer_idx(0).b_qkv].data.iter().all(|&b| b == 0.0));
        assert!(a.check_shapes(&cfg).is_ok());
    }
}
