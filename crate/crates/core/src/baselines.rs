//! Reference point predictors: Riegel power-law extrapolation and the
//! training-set mean pace.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::dataset::{RunnerHistory, METERS_PER_MILE};

pub const DEFAULT_RIEGEL_EXPONENT: f64 = 1.06;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiegelConfig {
    pub exponent: f64,
}

impl Default for RiegelConfig {
    fn default() -> Self {
        RiegelConfig { exponent: DEFAULT_RIEGEL_EXPONENT }
    }
}

impl RiegelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.exponent > 0.0 && self.exponent.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("riegel.exponent must be positive, got {}", self.exponent)))
        }
    }
}

/// Finishing time at `target_m` extrapolated from `(distance_m, time_s)`.
pub fn riegel_time(reference: (f64, f64), target_m: f64, cfg: &RiegelConfig) -> Result<f64> {
    cfg.validate()?;
    let (d1, t1) = reference;
    if !(d1 > 0.0 && t1 > 0.0 && target_m > 0.0) {
        return Err(Error::invalid(format!(
            "Riegel needs positive distances and time, got d1={d1}, t1={t1}, d2={target_m}"
        )));
    }
    if target_m == d1 {
        return Ok(t1);
    }
    Ok(t1 * (target_m / d1).powf(cfg.exponent))
}

/// Predicted pace (seconds per mile) at `target_m`.
pub fn riegel_predict(reference: (f64, f64), target_m: f64, cfg: &RiegelConfig) -> Result<f64> {
    Ok(riegel_time(reference, target_m, cfg)? * METERS_PER_MILE / target_m)
}

/// Riegel prediction for event `target_index`, using the race just before it
/// as the reference. Returns `None` when there is no earlier race.
pub fn riegel_for_target(history: &RunnerHistory, target_index: usize, cfg: &RiegelConfig) -> Result<Option<f64>> {
    if target_index >= history.events.len() {
        return Err(Error::IndexOutOfRange { index: target_index, len: history.events.len() });
    }
    if target_index == 0 {
        return Ok(None);
    }
    let reference = &history.events[target_index - 1];
    let target = &history.events[target_index];
    riegel_predict((reference.distance_m, reference.total_time_s()), target.distance_m, cfg).map(Some)
}

/// Streaming arithmetic mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NaiveMean {
    pub count: u64,
    pub mean: f64,
}

impl NaiveMean {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.mean += (x - self.mean) / self.count as f64;
    }

    pub fn value(&self) -> Result<f64> {
        if self.count == 0 {
            Err(Error::Data("naive mean of an empty training set".into()))
        } else {
            Ok(self.mean)
        }
    }
}

pub fn naive_mean_predict<I: IntoIterator<Item = f64>>(train_paces: I) -> Result<f64> {
    let mut m = NaiveMean::default();
    for x in train_paces {
        if !x.is_finite() {
            return Err(Error::Data(format!("non-finite training pace {x}")));
        }
        m.push(x);
    }
    m.value()
}
