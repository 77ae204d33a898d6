//! Synthetic runner trajectories with known generating coefficients.
//!
//! ```text
//! pace = baseline + trend·t
//!      + temp_coef·max(0, T − temp_threshold)
//!      + humidity_coef·(H − humidity_ref)
//!      + wind_coef·W
//!      + baseline·((d / 10 km)^(distance_exponent − 1) − 1)
//!      + N(0, noise_sd²)
//! ```
//! `t` is weeks since the runner's first event. Everything but the noise is
//! recorded in a ground-truth sidecar, so the Bayes-optimal predictive
//! distribution is a Gaussian with known mean and `noise_sd`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::dataset::{EventRecord, RunnerHistory};
use crate::hash::derive_seed;
use crate::quantizer::BinSpec;
use crate::soft_targets::{gaussian_bin_masses, one_hot};

pub const REFERENCE_DISTANCE_M: f64 = 10_000.0;
pub const TRUTH_FORMAT: &str = "pacetok-truth";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_runners: usize,
    pub min_events: usize,
    pub max_events: usize,
    /// Mean number of events beyond `min_events` (geometric, truncated at `max_events`).
    pub mean_extra_events: f64,
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    /// Seconds per mile per week; negative means improving.
    pub trend_mean: f64,
    pub trend_sd: f64,
    pub temp_threshold_c: f64,
    pub temp_coef: f64,
    pub humidity_ref: f64,
    pub humidity_coef: f64,
    pub wind_coef: f64,
    pub distance_exponent: f64,
    /// Mean gap between events, weeks (geometric on 1, 2, …).
    pub gap_mean_weeks: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_runners: 2000,
            min_events: 2,
            max_events: 40,
            mean_extra_events: 5.0,
            baseline_mean: 540.0,
            baseline_sd: 60.0,
            trend_mean: 0.0,
            trend_sd: 1.5,
            temp_threshold_c: 15.0,
            temp_coef: 2.0,
            humidity_ref: 50.0,
            humidity_coef: 0.2,
            wind_coef: 0.5,
            distance_exponent: 1.06,
            gap_mean_weeks: 4.0,
            noise_sd: 10.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth.{m}")));
        if self.n_runners == 0 {
            return bad("n_runners must be positive");
        }
        if self.min_events < 2 || self.max_events < self.min_events {
            return bad("events need max_events >= min_events >= 2");
        }
        if !(self.mean_extra_events >= 0.0) {
            return bad("mean_extra_events must be non-negative");
        }
        if !(self.baseline_mean > 0.0 && self.baseline_sd >= 0.0 && self.trend_sd >= 0.0 && self.noise_sd >= 0.0) {
            return bad("baseline_mean must be positive and scales non-negative");
        }
        if !(self.distance_exponent > 0.0) {
            return bad("distance_exponent must be positive");
        }
        if !(self.gap_mean_weeks >= 1.0) {
            return bad("gap_mean_weeks must be at least 1");
        }
        let all = [
            self.baseline_mean,
            self.baseline_sd,
            self.trend_mean,
            self.trend_sd,
            self.temp_threshold_c,
            self.temp_coef,
            self.humidity_ref,
            self.humidity_coef,
            self.wind_coef,
            self.distance_exponent,
            self.noise_sd,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("coefficients must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerTruth {
    pub runner_id: String,
    pub baseline: f64,
    pub trend: f64,
}

/// Ground-truth sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub format: String,
    pub config: GeneratorConfig,
    pub runners: Vec<RunnerTruth>,
}

impl GroundTruth {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self).expect("truth serializes") + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("missing ground-truth sidecar {}: {e}", path.display())))?;
        let t: GroundTruth = serde_json::from_str(&text)?;
        if t.format != TRUTH_FORMAT {
            return Err(Error::Data(format!("{} is not a ground-truth sidecar", path.display())));
        }
        Ok(t)
    }

    pub fn runner(&self, runner_id: &str) -> Result<&RunnerTruth> {
        self.runners
            .iter()
            .find(|r| r.runner_id == runner_id)
            .ok_or_else(|| Error::Data(format!("no ground truth for runner {runner_id}")))
    }

    /// Noise-free pace of event `index`.
    pub fn expected_pace(&self, history: &RunnerHistory, index: usize) -> Result<f64> {
        let r = self.runner(&history.runner_id)?;
        let e = history
            .events
            .get(index)
            .ok_or(Error::IndexOutOfRange { index, len: history.events.len() })?;
        let t = history.weeks_between(0, index) as f64;
        Ok(mean_pace(&self.config, r.baseline, r.trend, t, e))
    }
}

fn mean_pace(cfg: &GeneratorConfig, baseline: f64, trend: f64, t_weeks: f64, e: &EventRecord) -> f64 {
    baseline
        + trend * t_weeks
        + cfg.temp_coef * (e.temperature_c - cfg.temp_threshold_c).max(0.0)
        + cfg.humidity_coef * (e.humidity_pct - cfg.humidity_ref)
        + cfg.wind_coef * e.wind_kph
        + baseline * ((e.distance_m / REFERENCE_DISTANCE_M).powf(cfg.distance_exponent - 1.0) - 1.0)
}

const DISTANCES: [(f64, f64); 4] = [(5000.0, 0.4), (10000.0, 0.35), (21097.5, 0.15), (42195.0, 0.10)];
const CONDITIONS: [(&str, f64); 3] = [("clear", 0.6), ("rain", 0.2), ("other", 0.2)];
const GENDERS: [(&str, f64); 3] = [("F", 0.48), ("M", 0.48), ("X", 0.04)];

fn pick<T: Copy, R: Rng>(rng: &mut R, table: &[(T, f64)]) -> T {
    let mut u: f64 = rng.random();
    for &(v, p) in table {
        if u < p {
            return v;
        }
        u -= p;
    }
    table[table.len() - 1].0
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("finite normal parameters")
}

fn generate_runner(cfg: &GeneratorConfig, index: usize) -> (RunnerHistory, RunnerTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "runner", index as u64));
    let runner_id = format!("r{index:06}");
    let baseline = normal(cfg.baseline_mean, cfg.baseline_sd).sample(&mut rng).max(0.25 * cfg.baseline_mean);
    let trend = normal(cfg.trend_mean, cfg.trend_sd).sample(&mut rng);
    let gender = pick(&mut rng, &GENDERS);
    let start_age: u32 = rng.random_range(18..=70);

    let extra = if cfg.mean_extra_events > 0.0 {
        let g = Geometric::new(1.0 / (1.0 + cfg.mean_extra_events)).expect("valid geometric");
        g.sample(&mut rng) as usize
    } else {
        0
    };
    let n_events = (cfg.min_events + extra).min(cfg.max_events);
    let gaps = Geometric::new(1.0 / cfg.gap_mean_weeks).expect("valid geometric");
    let noise = normal(0.0, cfg.noise_sd);

    let mut t = 0u32;
    let mut events = Vec::with_capacity(n_events);
    for i in 0..n_events {
        let gap = if i == 0 { 0 } else { 1 + gaps.sample(&mut rng) as u32 };
        t += gap;
        let temperature_c = normal(14.0, 8.0).sample(&mut rng);
        let humidity_pct: f64 = rng.random_range(25.0..98.0);
        let wind_kph: f64 = rng.random_range(0.0..35.0);
        let feels_like_c =
            temperature_c - 0.12 * wind_kph + 0.03 * (humidity_pct - 50.0) + normal(0.0, 0.5).sample(&mut rng);
        let mut e = EventRecord {
            temperature_c,
            feels_like_c,
            humidity_pct,
            wind_kph,
            conditions: pick(&mut rng, &CONDITIONS).to_string(),
            distance_m: pick(&mut rng, &DISTANCES),
            age_years: start_age + t / 52,
            gender: String::new(),
            weeks_since_last: gap,
            weeks_to_target: 0,
            pace: 0.0,
        };
        let eps = if cfg.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        e.pace = (mean_pace(cfg, baseline, trend, t as f64, &e) + eps).max(1.0);
        events.push(e);
    }
    let total = t;
    let mut elapsed = 0;
    for e in &mut events {
        elapsed += e.weeks_since_last;
        e.weeks_to_target = total - elapsed;
    }
    (RunnerHistory::new(runner_id.clone(), gender, events), RunnerTruth { runner_id, baseline, trend })
}

/// Deterministic given `cfg.seed`; runners are generated independently in index order.
pub fn generate(cfg: &GeneratorConfig) -> Result<(Vec<RunnerHistory>, GroundTruth)> {
    cfg.validate()?;
    let (histories, runners) = (0..cfg.n_runners).map(|i| generate_runner(cfg, i)).unzip();
    Ok((histories, GroundTruth { format: TRUTH_FORMAT.into(), config: cfg.clone(), runners }))
}

/// The generating Gaussian for event `index`, discretized onto `spec`, with
/// its variance multiplied by `variance_scale`.
pub fn oracle_pdf_scaled(
    truth: &GroundTruth,
    history: &RunnerHistory,
    index: usize,
    spec: &BinSpec<f64>,
    variance_scale: f64,
) -> Result<Vec<f64>> {
    if !(variance_scale >= 0.0) {
        return Err(Error::invalid("variance scale must be non-negative"));
    }
    let mu = truth.expected_pace(history, index)?;
    let sigma = truth.config.noise_sd * variance_scale.sqrt();
    if sigma == 0.0 {
        return match spec.locate(mu)? {
            Some(bin) => Ok(one_hot(spec.len(), bin)),
            None => Err(Error::Data(format!("oracle mean {mu} outside the pace bins"))),
        };
    }
    let masses = gaussian_bin_masses(mu, sigma, &spec.edges);
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical(format!("oracle Gaussian at {mu} has no mass inside the pace bins")));
    }
    Ok(masses.into_iter().map(|m| m / total).collect())
}

pub fn oracle_pdf(truth: &GroundTruth, history: &RunnerHistory, index: usize, spec: &BinSpec<f64>) -> Result<Vec<f64>> {
    oracle_pdf_scaled(truth, history, index, spec, 1.0)
}
