//! Distribution-aware evaluation: point summaries of binned PDFs, MAE/RMSE,
//! PIT calibration with the KS statistic, Q-Q points, quantile occupancy and
//! reliability curves stratified by true-outcome quantile.
//!
//! Both the median and the PIT treat the predicted PDF as uniform inside
//! each bin, so the CDF is piecewise linear between bin edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::BinSpec;
use crate::scalar::Scalar;

pub const DEFAULT_STRATA: usize = 10;
pub const DEFAULT_HISTOGRAM_BINS: usize = 10;
pub const PDF_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSummary<T> {
    pub mean: T,
    pub median: T,
    pub mode: T,
}

/// Checks that `probs` is a probability vector over the bins of `spec`.
pub fn validate_pdf<T: Scalar>(probs: &[T], spec: &BinSpec<T>) -> Result<()> {
    if probs.len() != spec.len() {
        return Err(Error::invalid(format!(
            "pdf has {} entries for {} bins",
            probs.len(),
            spec.len()
        )));
    }
    if let Some(i) = probs.iter().position(|p| !(*p >= T::zero()) || !p.is_finite()) {
        return Err(Error::Numerical(format!("pdf entry {i} is {}", probs[i])));
    }
    let total: f64 = probs.iter().map(|p| p.as_f64()).sum();
    if (total - 1.0).abs() > PDF_TOLERANCE {
        return Err(Error::Numerical(format!("pdf sums to {total}")));
    }
    Ok(())
}

/// Mean of bin centers, interpolated median, and center of the most probable
/// bin (the lowest such bin on ties).
pub fn point_summaries<T: Scalar>(probs: &[T], spec: &BinSpec<T>) -> Result<PointSummary<T>> {
    validate_pdf(probs, spec)?;
    let centers = spec.centers();
    let mean = probs.iter().zip(&centers).map(|(&p, &c)| p * c).sum();
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok(PointSummary { mean, median: quantile(probs, spec, T::lit(0.5)), mode: centers[best] })
}

/// Value where the interpolated CDF reaches `q`.
pub fn quantile<T: Scalar>(probs: &[T], spec: &BinSpec<T>, q: T) -> T {
    let mut cum = T::zero();
    for (i, &p) in probs.iter().enumerate() {
        if p > T::zero() && cum + p >= q {
            let lo = spec.edges[i];
            let w = spec.edges[i + 1] - lo;
            let frac = ((q - cum) / p).max(T::zero()).min(T::one());
            return lo + frac * w;
        }
        cum += p;
    }
    let last = probs.iter().rposition(|&p| p > T::zero()).unwrap_or(probs.len() - 1);
    spec.edges[last + 1]
}

/// Interpolated predictive CDF at `y`: 0 below the support, 1 at or above it.
pub fn pit<T: Scalar>(probs: &[T], spec: &BinSpec<T>, y: T) -> Result<T> {
    if y.is_nan() {
        return Err(Error::Numerical("PIT of NaN outcome".into()));
    }
    if probs.len() != spec.len() {
        return Err(Error::invalid("pdf and bins disagree in length"));
    }
    match spec.locate(y)? {
        None if y < spec.lower() => Ok(T::zero()),
        None => Ok(T::one()),
        Some(i) => {
            let cum: T = probs[..i].iter().copied().sum();
            let lo = spec.edges[i];
            let w = spec.edges[i + 1] - lo;
            Ok((cum + probs[i] * (y - lo) / w).max(T::zero()).min(T::one()))
        }
    }
}

/// Kolmogorov-Smirnov distance between the empirical distribution of `samples` and U(0,1).
pub fn ks_statistic(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("KS statistic of an empty sample"));
    }
    if samples.iter().any(|u| u.is_nan()) {
        return Err(Error::Numerical("NaN PIT sample".into()));
    }
    let mut u = samples.to_vec();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in u.iter().enumerate() {
        let above = (i + 1) as f64 / n - v;
        let below = v - i as f64 / n;
        d = d.max(above).max(below);
    }
    Ok(d.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mae: f64,
    pub rmse: f64,
}

pub fn mae_rmse(predictions: &[f64], truths: &[f64]) -> Result<ErrorStats> {
    if predictions.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    let n = truths.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, y) in predictions.iter().zip(truths) {
        let e = p - y;
        abs += e.abs();
        sq += e * e;
    }
    Ok(ErrorStats { mae: abs / n, rmse: (sq / n).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub mean: ErrorStats,
    pub median: ErrorStats,
    pub mode: ErrorStats,
}

/// What a predictor emits for one example.
#[derive(Debug, Clone, PartialEq)]
pub enum Forecast {
    /// Probabilities over the pace bins.
    Pdf(Vec<f64>),
    /// A single value; its CDF is a step at the value.
    Point(f64),
}

/// Per-example evaluation record. The whole report can be rebuilt from these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub y_true: f64,
    pub pit: f64,
    pub mean: f64,
    pub median: f64,
    pub mode: f64,
}

pub fn evaluate_forecast(forecast: &Forecast, spec: &BinSpec<f64>, y_true: f64) -> Result<EvalRecord> {
    if !y_true.is_finite() {
        return Err(Error::Numerical(format!("non-finite outcome {y_true}")));
    }
    match forecast {
        Forecast::Pdf(probs) => {
            let s = point_summaries(probs, spec)?;
            Ok(EvalRecord { y_true, pit: pit(probs, spec, y_true)?, mean: s.mean, median: s.median, mode: s.mode })
        }
        Forecast::Point(v) => Ok(EvalRecord {
            y_true,
            pit: if y_true >= *v { 1.0 } else { 0.0 },
            mean: *v,
            median: *v,
            mode: *v,
        }),
    }
}

pub fn point_metrics(records: &[EvalRecord]) -> Result<PointMetrics> {
    let truths: Vec<f64> = records.iter().map(|r| r.y_true).collect();
    let pick = |f: fn(&EvalRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    Ok(PointMetrics {
        mean: mae_rmse(&pick(|r| r.mean), &truths)?,
        median: mae_rmse(&pick(|r| r.median), &truths)?,
        mode: mae_rmse(&pick(|r| r.mode), &truths)?,
    })
}

/// Counts of `samples` in `bins` equal-width cells of [0, 1]; 1.0 goes in the last cell.
pub fn occupancy(samples: &[f64], bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for &u in samples {
        let i = ((u * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
}

/// Empirical quantile with linear interpolation between order statistics.
fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let i = h.floor() as usize;
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub index: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub n: usize,
    pub ks: f64,
    pub occupancy: Vec<u64>,
    /// `(nominal level, fraction of PIT ≤ level)` at `k / bins`.
    pub reliability: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n: usize,
    pub ks: f64,
    pub pit: Vec<f64>,
    /// `(uniform quantile, empirical PIT quantile)` on the percentile grid.
    pub qq: Vec<(f64, f64)>,
    pub occupancy: Vec<u64>,
    pub strata: Vec<Stratum>,
    pub metrics: PointMetrics,
}

fn reliability(samples: &[f64], bins: usize) -> Vec<(f64, f64)> {
    let n = samples.len() as f64;
    (1..=bins)
        .map(|k| {
            let level = k as f64 / bins as f64;
            (level, samples.iter().filter(|&&u| u <= level).count() as f64 / n)
        })
        .collect()
}

/// Global and per-stratum calibration. Strata are contiguous groups of
/// examples ordered by true outcome (ties keep input order).
pub fn stratified_report(records: &[EvalRecord], strata: usize, histogram_bins: usize) -> Result<CalibrationReport> {
    if strata == 0 || histogram_bins == 0 {
        return Err(Error::invalid("strata and histogram bins must be positive"));
    }
    if records.len() < strata {
        return Err(Error::Data(format!(
            "{} evaluation samples for {strata} strata; need at least {strata}",
            records.len()
        )));
    }
    let pit: Vec<f64> = records.iter().map(|r| r.pit).collect();
    if let Some(bad) = pit.iter().find(|u| !(0.0..=1.0).contains(*u)) {
        return Err(Error::Numerical(format!("PIT value {bad} outside [0, 1]")));
    }
    let mut sorted = pit.clone();
    sorted.sort_by(f64::total_cmp);
    let qq = (1..100)
        .map(|p| {
            let q = p as f64 / 100.0;
            (q, empirical_quantile(&sorted, q))
        })
        .collect();

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].y_true.total_cmp(&records[b].y_true));
    let n = records.len();
    let mut out = Vec::with_capacity(strata);
    for s in 0..strata {
        let idx = &order[s * n / strata..(s + 1) * n / strata];
        let u: Vec<f64> = idx.iter().map(|&i| records[i].pit).collect();
        out.push(Stratum {
            index: s,
            y_min: records[idx[0]].y_true,
            y_max: records[idx[idx.len() - 1]].y_true,
            n: idx.len(),
            ks: ks_statistic(&u)?,
            occupancy: occupancy(&u, histogram_bins),
            reliability: reliability(&u, histogram_bins),
        });
    }

    Ok(CalibrationReport {
        n,
        ks: ks_statistic(&pit)?,
        occupancy: occupancy(&pit, histogram_bins),
        pit,
        qq,
        strata: out,
        metrics: point_metrics(records)?,
    })
}
