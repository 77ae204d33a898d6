//! Gaussian-integrated soft targets over pace bins.
//!
//! Each bin receives the mass a Gaussian centred on the observed value places
//! inside it. Mass that falls outside the binned support is dropped and the
//! vector renormalized, so the target stays a proper distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::BinSpec;
use crate::scalar::Scalar;
use crate::special::normal_interval_mass;

/// Reference smoothing pair for the adaptive rule.
pub const DEFAULT_SIGMA_FLOOR: f64 = 2.7;
pub const DEFAULT_K: f64 = 1.5;
/// Reference fixed smoothing width, seconds.
pub const DEFAULT_FIXED_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SmoothingConfig {
    /// One-hot targets (plain cross-entropy).
    Hard,
    Fixed { sigma: f64 },
    Adaptive { sigma_floor: f64, k: f64 },
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig::Adaptive { sigma_floor: DEFAULT_SIGMA_FLOOR, k: DEFAULT_K }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SmoothingConfig::Hard => Ok(()),
            SmoothingConfig::Fixed { sigma } => {
                if sigma > 0.0 && sigma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!("fixed smoothing needs sigma > 0, got {sigma}")))
                }
            }
            SmoothingConfig::Adaptive { sigma_floor, k } => {
                if !(sigma_floor >= 0.0 && k >= 0.0 && sigma_floor.is_finite() && k.is_finite()) {
                    Err(Error::Config(format!(
                        "adaptive smoothing needs sigma_floor >= 0 and k >= 0, got ({sigma_floor}, {k})"
                    )))
                } else if sigma_floor == 0.0 && k == 0.0 {
                    Err(Error::Config("adaptive smoothing with sigma_floor = k = 0 is degenerate".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Short human label, e.g. `hard`, `sigma=4`, `adaptive(floor=2.7 k=1.5)`.
    pub fn label(&self) -> String {
        match *self {
            SmoothingConfig::Hard => "hard".to_string(),
            SmoothingConfig::Fixed { sigma } => format!("sigma={sigma}"),
            SmoothingConfig::Adaptive { sigma_floor, k } => format!("adaptive(floor={sigma_floor} k={k})"),
        }
    }

    /// The Gaussian width used for a target in bin `bin`, or `None` in hard mode.
    ///
    /// `scale` multiplies the width (used by the optional annealing schedule).
    pub fn sigma_for<T: Scalar>(&self, spec: &BinSpec<T>, bin: usize, scale: f64) -> Result<Option<T>> {
        let sigma = match *self {
            SmoothingConfig::Hard => return Ok(None),
            SmoothingConfig::Fixed { sigma } => T::lit(sigma),
            SmoothingConfig::Adaptive { sigma_floor, k } => {
                adaptive_sigma(spec.bin_width(bin)?, T::lit(sigma_floor), T::lit(k))?
            }
        };
        Ok(Some(sigma * T::lit(scale)))
    }
}

/// `sqrt(sigma_floor² + (k·w)²)`.
pub fn adaptive_sigma<T: Scalar>(w: T, sigma_floor: T, k: T) -> Result<T> {
    if !(w >= T::zero() && sigma_floor >= T::zero() && k >= T::zero()) {
        return Err(Error::invalid(format!(
            "adaptive sigma needs non-negative inputs, got w={w}, sigma_floor={sigma_floor}, k={k}"
        )));
    }
    Ok(sigma_floor.hypot(k * w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftTarget<T> {
    pub probs: Vec<T>,
    pub target_bin: usize,
    pub y_true: T,
}

/// Raw (unnormalized) Gaussian masses `Φ((end−y)/σ) − Φ((start−y)/σ)` per bin.
pub fn gaussian_bin_masses<T: Scalar>(y: T, sigma: T, edges: &[T]) -> Vec<T> {
    edges
        .windows(2)
        .map(|w| normal_interval_mass((w[0] - y) / sigma, (w[1] - y) / sigma))
        .collect()
}

pub fn gaussian_integrated_target<T: Scalar>(
    y_true: T,
    spec: &BinSpec<T>,
    cfg: &SmoothingConfig,
) -> Result<SoftTarget<T>> {
    gaussian_integrated_target_scaled(y_true, spec, cfg, 1.0)
}

/// As [`gaussian_integrated_target`], with the smoothing width multiplied by `sigma_scale`.
pub fn gaussian_integrated_target_scaled<T: Scalar>(
    y_true: T,
    spec: &BinSpec<T>,
    cfg: &SmoothingConfig,
    sigma_scale: f64,
) -> Result<SoftTarget<T>> {
    cfg.validate()?;
    let target_bin = spec.locate_in_support(y_true)?;
    let probs = match cfg.sigma_for(spec, target_bin, sigma_scale)? {
        None => one_hot(spec.len(), target_bin),
        Some(sigma) => {
            if !(sigma > T::zero()) {
                return Err(Error::Numerical(format!("smoothing width resolved to {sigma}")));
            }
            let masses = gaussian_bin_masses(y_true, sigma, &spec.edges);
            let total: T = masses.iter().copied().sum();
            if !(total > T::zero()) {
                return Err(Error::Numerical(format!(
                    "no Gaussian mass inside the support for y={y_true}, sigma={sigma}"
                )));
            }
            masses.into_iter().map(|m| m / total).collect()
        }
    };
    Ok(SoftTarget { probs, target_bin, y_true })
}

pub fn one_hot<T: Scalar>(len: usize, hot: usize) -> Vec<T> {
    let mut v = vec![T::zero(); len];
    v[hot] = T::one();
    v
}

/// Numerically stable `log softmax`.
pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `−Σ T_i · log softmax(logits)_i`.
pub fn smoothed_cross_entropy<T: Scalar>(logits: &[T], target: &[T]) -> Result<T> {
    if logits.len() != target.len() {
        return Err(Error::invalid(format!(
            "logit length {} does not match target length {}",
            logits.len(),
            target.len()
        )));
    }
    let logp = log_softmax(logits);
    Ok(target
        .iter()
        .zip(&logp)
        .filter(|(&t, _)| t > T::zero())
        .map(|(&t, &lp)| -t * lp)
        .sum())
}

/// Loss together with its gradient with respect to the logits, `softmax − T`.
pub fn smoothed_cross_entropy_with_grad<T: Scalar>(logits: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    let loss = smoothed_cross_entropy(logits, target)?;
    let p = softmax(logits);
    let grad = p.iter().zip(target).map(|(&p, &t)| p - t).collect();
    Ok((loss, grad))
}
