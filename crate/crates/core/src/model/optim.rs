//! AdamW with decoupled weight decay on matrices and embeddings only.

use serde::{Deserialize, Serialize};

use super::params::Params;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.00118 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    m: Params<T>,
    v: Params<T>,
    step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &Params<T>, config: AdamWConfig) -> Self {
        AdamW { config, m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr` (overrides `config.lr`).
    pub fn step_with_lr(&mut self, params: &mut Params<T>, grads: &Params<T>, lr: f64) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let step_size = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(c.eps);
        let shrink = T::lit(1.0 - lr * c.weight_decay);
        for (((p, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m.tensors)
            .zip(&mut self.v.tensors)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + one_b1 * gi;
                v.data[i] = b2 * v.data[i] + one_b2 * gi * gi;
                let mut w = p.data[i];
                if p.decay {
                    w *= shrink;
                }
                w -= step_size * m.data[i] / ((v.data[i] * inv_bc2).sqrt() + eps);
                p.data[i] = w;
            }
        }
    }

    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>) {
        let lr = self.config.lr;
        self.step_with_lr(params, grads, lr);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn zero_gradient_only_decays_matrices() {
        let cfg = ModelConfig::tiny(10, 4, 12);
        let mut p = Params::<f64>::init(&cfg, 1);
        for t in &mut p.tensors {
            for v in &mut t.data {
                *v += 0.5;
            }
        }
        let before = p.clone();
        let config = AdamWConfig { lr: 0.01, weight_decay: 0.1, ..Default::default() };
        let mut opt = AdamW::new(&p, config);
        opt.step(&mut p, &before.zeros_like());
        for (a, b) in p.tensors.iter().zip(&before.tensors) {
            for (x, y) in a.data.iter().zip(&b.data) {
                if a.decay {
                    assert_eq!(*x, y * (1.0 - 0.01 * 0.1));
                } else {
                    assert_eq!(x, y);
                }
            }
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = ModelConfig::tiny(10, 4, 12);
        let mut p = Params::<f64>::zeros(&cfg);
        let mut g = p.zeros_like();
        for t in &mut g.tensors {
            for (i, v) in t.data.iter_mut().enumerate() {
                *v = if i % 2 == 0 { 3.0 } else { -0.2 };
            }
        }
        let mut opt = AdamW::new(&p, AdamWConfig { lr: 0.05, weight_decay: 0.0, ..Default::default() });
        opt.step(&mut p, &g);
        for (t, gt) in p.tensors.iter().zip(&g.tensors) {
            for (x, gv) in t.data.iter().zip(&gt.data) {
                assert!((x + 0.05 * gv.signum()).abs() < 1e-8);
            }
        }
    }
}
