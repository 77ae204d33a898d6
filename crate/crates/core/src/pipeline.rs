//! End-to-end plumbing: entity splits, bin fitting on the training split,
//! vocabulary construction, window encoding, training and scoring.

use serde::{Deserialize, Serialize};

use crate::baselines::{naive_mean_predict, riegel_for_target, RiegelConfig};
use crate::error::{Error, Result};
use crate::evalcal::{evaluate_forecast, EvalRecord, Forecast};
use crate::grammar::vocab::{default_conditions, default_distances, default_genders, GrammarSpec};
use crate::grammar::{encode_window, split_entities, Ablation, EncodedWindow, Field, RunnerHistory, Split, SplitRatios, Vocabulary, WindowLayout};
use crate::model::train::{evaluate_windows, train, TrainOutcome};
use crate::model::{InputEmbedding, ModelConfig, TrainConfig};
use crate::quantizer::{fit_balanced, BinSpec};
use crate::scalar::Scalar;
use crate::soft_targets::SmoothingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureBinning {
    pub target_bins: usize,
    pub width_cap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinningConfig {
    pub temperature: FeatureBinning,
    pub humidity: FeatureBinning,
    pub wind: FeatureBinning,
    pub feels_like: FeatureBinning,
    pub pace: FeatureBinning,
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig {
            temperature: FeatureBinning { target_bins: 16, width_cap: 6.0 },
            humidity: FeatureBinning { target_bins: 10, width_cap: 12.0 },
            wind: FeatureBinning { target_bins: 8, width_cap: 8.0 },
            feels_like: FeatureBinning { target_bins: 16, width_cap: 6.0 },
            pace: FeatureBinning { target_bins: 64, width_cap: 30.0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrammarConfig {
    pub age_bucket_years: u32,
    pub age_cap_years: u32,
    pub distance_tolerance: f64,
    pub cadence_cap: u32,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig { age_bucket_years: 5, age_cap_years: 90, distance_tolerance: 0.02, cadence_cap: 104 }
    }
}

/// Balanced bins for every quantized field, fitted to `train` only.
pub fn fit_bins(train: &[RunnerHistory], cfg: &BinningConfig) -> Result<Vec<BinSpec<f64>>> {
    if train.is_empty() {
        return Err(Error::Data("no training runners to fit bins on".into()));
    }
    let events: Vec<_> = train.iter().flat_map(|h| h.events.iter()).collect();
    let column = |f: fn(&crate::grammar::EventRecord) -> f64| events.iter().map(|e| f(e)).collect::<Vec<f64>>();
    let fit = |field: Field, values: Vec<f64>, b: FeatureBinning| fit_balanced(field.name(), &values, b.target_bins, b.width_cap);
    Ok(vec![
        fit(Field::Temperature, column(|e| e.temperature_c), cfg.temperature)?,
        fit(Field::Humidity, column(|e| e.humidity_pct), cfg.humidity)?,
        fit(Field::Wind, column(|e| e.wind_kph), cfg.wind)?,
        fit(Field::FeelsLike, column(|e| e.feels_like_c), cfg.feels_like)?,
        fit(Field::Pace, column(|e| e.pace), cfg.pace)?,
    ])
}

/// Vocabulary from the five fitted bin specs (in `fit_bins` order).
pub fn build_vocabulary(bins: &[BinSpec<f64>], cfg: &GrammarConfig) -> Result<Vocabulary> {
    let [temperature, humidity, wind, feels_like, pace] = bins else {
        return Err(Error::invalid(format!("expected 5 bin specs, got {}", bins.len())));
    };
    Vocabulary::for_grammar(&GrammarSpec {
        temperature: temperature.clone(),
        humidity: humidity.clone(),
        wind: wind.clone(),
        feels_like: feels_like.clone(),
        pace: pace.clone(),
        conditions: default_conditions(),
        genders: default_genders(),
        age_bucket_years: cfg.age_bucket_years,
        age_cap_years: cfg.age_cap_years,
        distances: default_distances(),
        distance_tolerance: cfg.distance_tolerance,
        cadence_cap: cfg.cadence_cap,
    })
}

#[derive(Debug, Clone, Default)]
pub struct SplitHistories {
    pub train: Vec<RunnerHistory>,
    pub validation: Vec<RunnerHistory>,
    pub test: Vec<RunnerHistory>,
}

impl SplitHistories {
    pub fn get(&self, split: Split) -> &[RunnerHistory] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

pub fn split_histories(histories: Vec<RunnerHistory>, ratios: &SplitRatios, seed: u64) -> Result<SplitHistories> {
    let ids: Vec<&str> = histories.iter().map(|h| h.runner_id.as_str()).collect();
    let assignment = split_entities(&ids, ratios, seed)?;
    let mut out = SplitHistories::default();
    for (h, s) in histories.into_iter().zip(assignment) {
        match s {
            Split::Train => out.train.push(h),
            Split::Validation => out.validation.push(h),
            Split::Test => out.test.push(h),
        }
    }
    Ok(out)
}

/// Every `(runner, target)` pair with at least one earlier event.
pub fn targets(histories: &[RunnerHistory]) -> Vec<(&RunnerHistory, usize)> {
    histories.iter().flat_map(|h| (1..h.events.len()).map(move |t| (h, t))).collect()
}

#[derive(Debug, Clone)]
pub struct EncodedSplit {
    pub windows: Vec<EncodedWindow>,
    /// Targets dropped because a value fell outside the fitted bins.
    pub skipped: usize,
}

/// Encodes all targets; windows touching out-of-support values are skipped and counted.
pub fn encode_histories(histories: &[RunnerHistory], vocab: &Vocabulary, layout: &WindowLayout) -> Result<EncodedSplit> {
    let mut windows = Vec::new();
    let mut skipped = 0;
    for (h, t) in targets(histories) {
        match encode_window(h, t, vocab, layout) {
            Ok(w) => windows.push(w),
            Err(Error::OutOfSupport { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(EncodedSplit { windows, skipped })
}

/// Everything a training run consumes.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub histories: SplitHistories,
    pub vocab: Vocabulary,
    pub layout: WindowLayout,
    pub train: EncodedSplit,
    pub validation: EncodedSplit,
    pub test: EncodedSplit,
    pub naive_mean: f64,
}

impl Prepared {
    pub fn windows(&self, split: Split) -> &[EncodedWindow] {
        match split {
            Split::Train => &self.train.windows,
            Split::Validation => &self.validation.windows,
            Split::Test => &self.test.windows,
        }
    }

    pub fn pace_bins(&self) -> &BinSpec<f64> {
        self.vocab.pace_bins().expect("grammar vocabulary has pace bins")
    }

    /// Same splits and vocabulary, windows re-encoded under another layout.
    pub fn relayout(&self, layout: WindowLayout) -> Result<Prepared> {
        Ok(Prepared {
            histories: self.histories.clone(),
            vocab: self.vocab.clone(),
            layout,
            train: encode_histories(&self.histories.train, &self.vocab, &layout)?,
            validation: encode_histories(&self.histories.validation, &self.vocab, &layout)?,
            test: encode_histories(&self.histories.test, &self.vocab, &layout)?,
            naive_mean: self.naive_mean,
        })
    }
}

#[allow(clippy::too_many_arguments)]
pub fn prepare(
    histories: Vec<RunnerHistory>,
    ratios: &SplitRatios,
    split_seed: u64,
    binning: &BinningConfig,
    grammar: &GrammarConfig,
    layout: WindowLayout,
) -> Result<Prepared> {
    let splits = split_histories(histories, ratios, split_seed)?;
    let bins = fit_bins(&splits.train, binning)?;
    let vocab = build_vocabulary(&bins, grammar)?;
    prepare_with_vocab(splits, vocab, layout)
}

pub fn prepare_with_vocab(splits: SplitHistories, vocab: Vocabulary, layout: WindowLayout) -> Result<Prepared> {
    let naive_mean = naive_mean_predict(splits.train.iter().flat_map(|h| h.events.iter().map(|e| e.pace)))?;
    let train = encode_histories(&splits.train, &vocab, &layout)?;
    let validation = encode_histories(&splits.validation, &vocab, &layout)?;
    let test = encode_histories(&splits.test, &vocab, &layout)?;
    if validation.skipped + test.skipped > 0 {
        log::info!(
            "skipped {} validation and {} test windows outside the fitted bins",
            validation.skipped,
            test.skipped
        );
    }
    Ok(Prepared { histories: splits, vocab, layout, train, validation, test, naive_mean })
}

/// Model configuration sized for `prepared`'s vocabulary and window layout.
pub fn model_config(profile: &str, prepared: &Prepared, input_embedding: InputEmbedding) -> Result<ModelConfig> {
    let (v, k, cap) = (prepared.vocab.size as usize, prepared.pace_bins().len(), prepared.layout.capacity());
    let mut cfg = match profile {
        "desk" => ModelConfig::desk(v, k, cap),
        "paper-doc" => ModelConfig::reference(v, k, cap),
        "tiny" => ModelConfig::tiny(v, k, cap),
        other => return Err(Error::Config(format!("unknown profile {other:?} (desk, paper-doc, tiny)"))),
    };
    cfg.input_embedding = input_embedding;
    Ok(cfg)
}

pub fn train_prepared<T: Scalar>(
    prepared: &Prepared,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    smoothing: &SmoothingConfig,
) -> Result<TrainOutcome<T>> {
    train(cfg, tc, smoothing, &prepared.vocab, &prepared.train.windows, &prepared.validation.windows)
}

pub fn model_records<T: Scalar>(
    params: &crate::model::Params<T>,
    cfg: &ModelConfig,
    prepared: &Prepared,
    split: Split,
) -> Result<Vec<EvalRecord>> {
    evaluate_windows(params, cfg, &prepared.vocab, prepared.windows(split))
}

pub fn naive_records(prepared: &Prepared, split: Split) -> Result<Vec<EvalRecord>> {
    let spec = prepared.pace_bins();
    prepared
        .windows(split)
        .iter()
        .map(|w| evaluate_forecast(&Forecast::Point(prepared.naive_mean), spec, w.label_value))
        .collect()
}

/// Riegel predictions for the same windows; targets without a usable
/// reference fall back to the naive mean.
pub fn riegel_records(prepared: &Prepared, split: Split, cfg: &RiegelConfig) -> Result<Vec<EvalRecord>> {
    let spec = prepared.pace_bins();
    let histories = prepared.histories.get(split);
    let mut fallbacks = 0;
    let out = prepared
        .windows(split)
        .iter()
        .map(|w| {
            let h = histories
                .iter()
                .find(|h| h.runner_id == w.runner_id)
                .ok_or_else(|| Error::Data(format!("runner {} missing from split", w.runner_id)))?;
            let pred = match riegel_for_target(h, w.target_index, cfg)? {
                Some(p) => p,
                None => {
                    fallbacks += 1;
                    prepared.naive_mean
                }
            };
            evaluate_forecast(&Forecast::Point(pred), spec, w.label_value)
        })
        .collect::<Result<Vec<_>>>()?;
    if fallbacks > 0 {
        log::info!("Riegel fell back to the naive mean for {fallbacks} targets");
    }
    Ok(out)
}

pub fn layout(max_events: usize, ablation: Ablation, seed: u64) -> WindowLayout {
    WindowLayout { max_events, ablation, seed }
}
