//! Discretized tokenization for calibrated pace forecasting.
//!
//! Continuous race features are quantized into balanced bins, every race
//! becomes a fixed-stride block of tokens, and a small causal transformer
//! predicts a distribution over pace bins. Targets are Gaussian-integrated
//! over the bins, and predictions are scored for both accuracy and
//! calibration (PIT / KS).
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below name the common instantiations.

pub mod baselines;
pub mod error;
pub mod evalcal;
pub mod grammar;
pub mod hash;
pub mod model;
pub mod pipeline;
pub mod quantizer;
pub mod report;
pub mod scalar;
pub mod soft_targets;
pub mod special;
pub mod synthdata;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

pub type BinSpec32 = quantizer::BinSpec<f32>;
pub type BinSpec64 = quantizer::BinSpec<f64>;
pub type SoftTarget32 = soft_targets::SoftTarget<f32>;
pub type SoftTarget64 = soft_targets::SoftTarget<f64>;
pub type Params32 = model::Params<f32>;
pub type Params64 = model::Params<f64>;
pub type ModelInput32 = model::ModelInput<f32>;
pub type ModelInput64 = model::ModelInput<f64>;
pub type TrainOutcome32 = model::TrainOutcome<f32>;
pub type TrainOutcome64 = model::TrainOutcome<f64>;
