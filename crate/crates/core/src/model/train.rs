//! Mini-batch training with smoothed cross-entropy at the prediction position.
//!
//! Validation median MAE and KS are logged at step 0, every `eval_interval`
//! steps and after the last step; the best snapshot under each criterion is kept.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::input::ModelInput;
use super::optim::{AdamW, AdamWConfig};
use super::params::Params;
use super::transformer::{backward, forward};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::evalcal::{evaluate_forecast, ks_statistic, point_metrics, EvalRecord, Forecast};
use crate::grammar::{EncodedWindow, Vocabulary};
use crate::hash::derive_seed;
use crate::scalar::Scalar;
use crate::soft_targets::{gaussian_integrated_target_scaled, smoothed_cross_entropy_with_grad, softmax, SmoothingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    BestMedianMae,
    BestKs,
}

impl Selection {
    pub fn name(self) -> &'static str {
        match self {
            Selection::BestMedianMae => "best_median_mae",
            Selection::BestKs => "best_ks",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "best_median_mae" => Ok(Selection::BestMedianMae),
            "best_ks" => Ok(Selection::BestKs),
            other => Err(Error::Config(format!(
                "unknown selection {other:?} (expected best_median_mae or best_ks)"
            ))),
        }
    }
}

/// Linear decay of the smoothing width from `start_scale`·σ down to σ at `end_step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaAnneal {
    pub start_scale: f64,
    pub end_step: usize,
}

impl SigmaAnneal {
    pub fn scale_at(&self, step: usize) -> f64 {
        if step >= self.end_step {
            return 1.0;
        }
        let t = step as f64 / self.end_step as f64;
        self.start_scale + (1.0 - self.start_scale) * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_steps: usize,
    pub eval_interval: usize,
    /// Evaluate on at most this many validation windows (all when `None`).
    pub eval_limit: Option<usize>,
    /// Rescale gradients whose global norm exceeds this value.
    pub grad_clip: Option<f64>,
    pub sigma_anneal: Option<SigmaAnneal>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            base_lr: 1e-4,
            weight_decay: 0.00118,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_steps: 10_000,
            eval_interval: 500,
            eval_limit: None,
            grad_clip: None,
            sigma_anneal: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Small-model settings that converge in a few hundred steps on one core.
    pub fn desk() -> Self {
        TrainConfig { batch_size: 32, base_lr: 3e-3, max_steps: 600, eval_interval: 100, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("train.base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("train.weight_decay must be non-negative".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return Err(Error::Config("train.beta1/beta2 must lie in [0, 1) and eps be positive".into()));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("train.eval_interval must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("train.grad_clip must be positive".into()));
            }
        }
        if let Some(a) = self.sigma_anneal {
            if !(a.start_scale > 0.0) || a.end_step == 0 {
                return Err(Error::Config("train.sigma_anneal needs start_scale > 0 and end_step > 0".into()));
            }
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.base_lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    /// Mean training loss since the previous evaluation (`None` at step 0).
    pub train_loss: Option<f64>,
    pub median_mae: f64,
    pub ks: f64,
}

#[derive(Debug, Clone)]
pub struct Snapshot<T> {
    pub step: usize,
    pub median_mae: f64,
    pub ks: f64,
    pub params: Params<T>,
}

impl<T: Scalar> Snapshot<T> {
    pub fn metric(&self, selection: Selection) -> f64 {
        match selection {
            Selection::BestMedianMae => self.median_mae,
            Selection::BestKs => self.ks,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub final_params: Params<T>,
    pub best_median_mae: Snapshot<T>,
    pub best_ks: Snapshot<T>,
    pub log: Vec<EvalPoint>,
    pub steps_completed: usize,
    /// Why training stopped early, if it did.
    pub halted: Option<String>,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn selected(&self, selection: Selection) -> &Snapshot<T> {
        match selection {
            Selection::BestMedianMae => &self.best_median_mae,
            Selection::BestKs => &self.best_ks,
        }
    }
}

/// Mean smoothed cross-entropy over a batch and its gradient.
pub fn batch_gradient<T: Scalar, R: rand::Rng>(
    params: &Params<T>,
    cfg: &ModelConfig,
    batch: &[(&ModelInput<T>, usize, &[T])],
    grads: &mut Params<T>,
    mut dropout: Option<&mut R>,
) -> Result<f64> {
    grads.fill_zero();
    let inv = T::one() / T::from_usize_lossy(batch.len());
    let mut total = 0.0;
    for &(input, position, target) in batch {
        let (logits, cache) = forward(params, cfg, input, position, dropout.as_deref_mut())?;
        let (loss, mut dlogits) = smoothed_cross_entropy_with_grad(&logits, target)?;
        total += loss.as_f64();
        for g in &mut dlogits {
            *g *= inv;
        }
        backward(params, cfg, input, &cache, &dlogits, grads)?;
    }
    Ok(total / batch.len() as f64)
}

/// Predicted pace-bin distributions for each window (dropout off).
pub fn predict<T: Scalar>(
    params: &Params<T>,
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    windows: &[EncodedWindow],
) -> Result<Vec<Vec<f64>>> {
    windows
        .iter()
        .map(|w| {
            let input = ModelInput::<T>::from_window(w, vocab, cfg, None)?;
            let (logits, _) = forward::<T, ChaCha8Rng>(params, cfg, &input, w.prediction_position, None)?;
            let p = softmax(&logits);
            let probs: Vec<f64> = p.iter().map(|v| v.as_f64()).collect();
            let total: f64 = probs.iter().sum();
            Ok(probs.into_iter().map(|v| v / total).collect())
        })
        .collect()
}

pub fn evaluate_windows<T: Scalar>(
    params: &Params<T>,
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    windows: &[EncodedWindow],
) -> Result<Vec<EvalRecord>> {
    let spec = vocab.pace_bins()?;
    predict(params, cfg, vocab, windows)?
        .into_iter()
        .zip(windows)
        .map(|(p, w)| evaluate_forecast(&Forecast::Pdf(p), spec, w.label_value))
        .collect()
}

fn validation_metrics<T: Scalar>(
    params: &Params<T>,
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    windows: &[EncodedWindow],
) -> Result<(f64, f64)> {
    let records = evaluate_windows(params, cfg, vocab, windows)?;
    let pits: Vec<f64> = records.iter().map(|r| r.pit).collect();
    Ok((point_metrics(&records)?.median.mae, ks_statistic(&pits)?))
}

fn targets<T: Scalar>(
    windows: &[EncodedWindow],
    vocab: &Vocabulary,
    smoothing: &SmoothingConfig,
    scale: f64,
) -> Result<Vec<Vec<T>>> {
    let spec = vocab.pace_bins()?;
    windows
        .iter()
        .map(|w| {
            let t = gaussian_integrated_target_scaled(w.label_value, spec, smoothing, scale)?;
            Ok(t.probs.into_iter().map(T::lit).collect())
        })
        .collect()
}

/// Trains from a seeded initialization. Deterministic given the configs and data.
pub fn train<T: Scalar>(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    smoothing: &SmoothingConfig,
    vocab: &Vocabulary,
    train_windows: &[EncodedWindow],
    validation_windows: &[EncodedWindow],
) -> Result<TrainOutcome<T>> {
    train_from(Params::init(cfg, tc.seed), cfg, tc, smoothing, vocab, train_windows, validation_windows)
}

pub fn train_from<T: Scalar>(
    init: Params<T>,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    smoothing: &SmoothingConfig,
    vocab: &Vocabulary,
    train_windows: &[EncodedWindow],
    validation_windows: &[EncodedWindow],
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    tc.validate()?;
    smoothing.validate()?;
    init.check_shapes(cfg)?;
    if cfg.vocab_size != vocab.size as usize || cfg.pace_bins != vocab.pace_bins()?.len() {
        return Err(Error::Config("model dimensions disagree with the vocabulary".into()));
    }
    if train_windows.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    if validation_windows.is_empty() {
        return Err(Error::Data("no validation windows".into()));
    }
    let val = match tc.eval_limit {
        Some(n) => &validation_windows[..n.min(validation_windows.len()).max(1)],
        None => validation_windows,
    };

    let inputs: Vec<ModelInput<T>> = train_windows
        .iter()
        .map(|w| ModelInput::from_window(w, vocab, cfg, None))
        .collect::<Result<_>>()?;
    let mut target_scale = tc.sigma_anneal.map_or(1.0, |a| a.scale_at(0));
    let mut soft = targets::<T>(train_windows, vocab, smoothing, target_scale)?;

    let mut params = init;
    let mut grads = params.zeros_like();
    let mut opt = AdamW::new(&params, tc.optimizer());
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, "batch-order", 0));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, "dropout", 0));
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;

    let (mae0, ks0) = validation_metrics(&params, cfg, vocab, val)?;
    log::info!("step 0: median MAE {mae0:.3}, KS {ks0:.4}");
    let snap = Snapshot { step: 0, median_mae: mae0, ks: ks0, params: params.clone() };
    let mut best_median_mae = snap.clone();
    let mut best_ks = snap;
    let mut log = vec![EvalPoint { step: 0, train_loss: None, median_mae: mae0, ks: ks0 }];
    let mut halted = None;
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut steps_completed = 0;

    for step in 1..=tc.max_steps {
        if let Some(a) = tc.sigma_anneal {
            let s = a.scale_at(step - 1);
            if s != target_scale {
                target_scale = s;
                soft = targets::<T>(train_windows, vocab, smoothing, target_scale)?;
            }
        }
        let mut batch = Vec::with_capacity(tc.batch_size);
        for _ in 0..tc.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            batch.push((&inputs[i], train_windows[i].prediction_position, soft[i].as_slice()));
        }
        let rng = if cfg.dropout > 0.0 { Some(&mut dropout_rng) } else { None };
        let loss = match batch_gradient(&params, cfg, &batch, &mut grads, rng) {
            Ok(l) if l.is_finite() => l,
            Ok(l) => {
                halted = Some(format!("step {step}: loss became {l}"));
                break;
            }
            Err(Error::Numerical(msg)) => {
                halted = Some(format!("step {step}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        if let Some(name) = grads.first_non_finite() {
            halted = Some(format!("step {step}: non-finite gradient in {name}"));
            break;
        }
        if let Some(clip) = tc.grad_clip {
            let norm = grads.global_norm();
            if norm > clip {
                grads.scale(T::lit(clip / norm));
            }
        }
        let last_good = params.clone();
        opt.step(&mut params, &grads);
        if let Some(name) = params.first_non_finite() {
            halted = Some(format!("step {step}: non-finite parameter in {name}"));
            params = last_good;
            break;
        }
        steps_completed = step;
        loss_sum += loss;
        loss_count += 1;

        if step % tc.eval_interval == 0 || step == tc.max_steps {
            let (mae, ks) = validation_metrics(&params, cfg, vocab, val)?;
            let train_loss = loss_sum / loss_count as f64;
            log::info!("step {step}: train loss {train_loss:.4}, median MAE {mae:.3}, KS {ks:.4}");
            log.push(EvalPoint { step, train_loss: Some(train_loss), median_mae: mae, ks });
            loss_sum = 0.0;
            loss_count = 0;
            if mae < best_median_mae.median_mae {
                best_median_mae = Snapshot { step, median_mae: mae, ks, params: params.clone() };
            }
            if ks < best_ks.ks {
                best_ks = Snapshot { step, median_mae: mae, ks, params: params.clone() };
            }
        }
    }
    if let Some(reason) = &halted {
        log::warn!("training halted: {reason}");
    }
    Ok(TrainOutcome { final_params: params, best_median_mae, best_ks, log, steps_completed, halted })
}
