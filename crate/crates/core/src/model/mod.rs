//! Decoder-only causal transformer over the event grammar, trained with
//! explicit backpropagation.

pub mod checkpoint;
pub mod diagnostics;
pub mod input;
pub mod ops;
pub mod optim;
pub mod params;
pub mod train;
pub mod transformer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use diagnostics::{dump_diagnostics, Diagnostics};
pub use input::{soft_embed, ModelInput};
pub use optim::AdamW;
pub use params::{Params, Tensor};
pub use train::{train, Selection, TrainConfig, TrainOutcome};
pub use transformer::{backward, forward, ForwardCache};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InputEmbedding {
    /// One embedding row per token.
    Discrete,
    /// Quantized continuous tokens embed as a Gaussian-weighted mix of their section's rows.
    SoftGaussian { sigma_floor: f64, k: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    /// Applied after the attention and feed-forward sublayers.
    pub dropout: f64,
    pub window_capacity: usize,
    pub vocab_size: usize,
    pub pace_bins: usize,
    pub input_embedding: InputEmbedding,
}

impl ModelConfig {
    /// Full-size reference architecture: 6 layers, 8 heads, width 512, FFN 2048, dropout 0.12.
    pub fn reference(vocab_size: usize, pace_bins: usize, window_capacity: usize) -> Self {
        ModelConfig {
            n_layers: 6,
            n_heads: 8,
            d_model: 512,
            d_ff: 2048,
            dropout: 0.12,
            window_capacity,
            vocab_size,
            pace_bins,
            input_embedding: InputEmbedding::Discrete,
        }
    }

    /// Laptop-scale profile.
    pub fn desk(vocab_size: usize, pace_bins: usize, window_capacity: usize) -> Self {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 32,
            d_ff: 64,
            dropout: 0.0,
            ..Self::reference(vocab_size, pace_bins, window_capacity)
        }
    }

    /// Gradient-check profile: 2 layers, width 8.
    pub fn tiny(vocab_size: usize, pace_bins: usize, window_capacity: usize) -> Self {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            dropout: 0.0,
            ..Self::reference(vocab_size, pace_bins, window_capacity)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("window_capacity", self.window_capacity),
            ("vocab_size", self.vocab_size),
            ("pace_bins", self.pace_bins),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "model.d_model ({}) must be divisible by model.n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("model.dropout must be in [0, 1), got {}", self.dropout)));
        }
        if let InputEmbedding::SoftGaussian { sigma_floor, k } = self.input_embedding {
            if !(sigma_floor >= 0.0 && k >= 0.0) || (sigma_floor == 0.0 && k == 0.0) {
                return Err(Error::Config("soft input embedding needs sigma_floor, k >= 0, not both 0".into()));
            }
        }
        Ok(())
    }
}
