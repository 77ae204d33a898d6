//! Flat `dotted.key=value` settings.
//!
//! Resolution order: profile defaults, then the config file, then
//! `PACETOK_*` environment variables, then command-line flags. The variable
//! for a key is `PACETOK_` followed by the key upper-cased with `.` replaced
//! by `_`, e.g. `PACETOK_TRAIN_BASE_LR` for `train.base_lr`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use pacetok::grammar::{Ablation, SplitRatios, WindowLayout};
use pacetok::model::train::SigmaAnneal;
use pacetok::model::{InputEmbedding, ModelConfig, Selection, TrainConfig};
use pacetok::pipeline::{BinningConfig, FeatureBinning, GrammarConfig};
use pacetok::soft_targets::SmoothingConfig;
use pacetok::synthdata::GeneratorConfig;
use pacetok::{Error, Result};

pub const ENV_PREFIX: &str = "PACETOK_";

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn defaults(profile: &str) -> Result<Vec<(String, String)>> {
    let synth = GeneratorConfig::default();
    let bins = BinningConfig::default();
    let grammar = GrammarConfig::default();
    let split = SplitRatios::default();
    let (train, max_events, arch) = match profile {
        "desk" => (TrainConfig { max_steps: 1000, ..TrainConfig::desk() }, 12, ModelConfig::desk(1, 1, 1)),
        "paper-doc" => (TrainConfig::default(), 30, ModelConfig::reference(1, 1, 1)),
        other => return Err(Error::Config(format!("unknown profile {other:?} (expected desk or paper-doc)"))),
    };
    let s = |v: &dyn Display| v.to_string();
    let fb = |b: FeatureBinning| (s(&b.target_bins), s(&b.width_cap));
    let fixed: Vec<(&str, String)> = vec![
        ("profile", profile.to_string()),
        ("seed", "0".into()),
        ("synth.n_runners", s(&synth.n_runners)),
        ("synth.min_events", s(&synth.min_events)),
        ("synth.max_events", s(&synth.max_events)),
        ("synth.mean_extra_events", s(&synth.mean_extra_events)),
        ("synth.baseline_mean", s(&synth.baseline_mean)),
        ("synth.baseline_sd", s(&synth.baseline_sd)),
        ("synth.trend_mean", s(&synth.trend_mean)),
        ("synth.trend_sd", s(&synth.trend_sd)),
        ("synth.temp_threshold_c", s(&synth.temp_threshold_c)),
        ("synth.temp_coef", s(&synth.temp_coef)),
        ("synth.humidity_ref", s(&synth.humidity_ref)),
        ("synth.humidity_coef", s(&synth.humidity_coef)),
        ("synth.wind_coef", s(&synth.wind_coef)),
        ("synth.distance_exponent", s(&synth.distance_exponent)),
        ("synth.gap_mean_weeks", s(&synth.gap_mean_weeks)),
        ("synth.noise_sd", s(&synth.noise_sd)),
        ("split.train", s(&split.train)),
        ("split.validation", s(&split.validation)),
        ("split.test", s(&split.test)),
        ("grammar.age_bucket_years", s(&grammar.age_bucket_years)),
        ("grammar.age_cap_years", s(&grammar.age_cap_years)),
        ("grammar.distance_tolerance", s(&grammar.distance_tolerance)),
        ("grammar.cadence_cap", s(&grammar.cadence_cap)),
        ("window.max_events", s(&max_events)),
        ("window.ablation", "none".into()),
        ("model.n_layers", s(&arch.n_layers)),
        ("model.n_heads", s(&arch.n_heads)),
        ("model.d_model", s(&arch.d_model)),
        ("model.d_ff", s(&arch.d_ff)),
        ("model.dropout", s(&arch.dropout)),
        ("model.input_embedding", "discrete".into()),
        ("model.soft_sigma_floor", s(&pacetok::soft_targets::DEFAULT_SIGMA_FLOOR)),
        ("model.soft_k", s(&pacetok::soft_targets::DEFAULT_K)),
        ("train.batch_size", s(&train.batch_size)),
        ("train.base_lr", s(&train.base_lr)),
        ("train.weight_decay", s(&train.weight_decay)),
        ("train.beta1", s(&train.beta1)),
        ("train.beta2", s(&train.beta2)),
        ("train.eps", s(&train.eps)),
        ("train.max_steps", s(&train.max_steps)),
        ("train.eval_interval", s(&train.eval_interval)),
        ("train.eval_limit", "all".into()),
        ("train.grad_clip", "off".into()),
        ("train.sigma_anneal.start_scale", "off".into()),
        ("train.sigma_anneal.end_step", "0".into()),
        ("train.select", "best_median_mae".into()),
        ("smoothing.mode", "adaptive".into()),
        ("smoothing.sigma", s(&pacetok::soft_targets::DEFAULT_FIXED_SIGMA)),
        ("smoothing.sigma_floor", s(&pacetok::soft_targets::DEFAULT_SIGMA_FLOOR)),
        ("smoothing.k", s(&pacetok::soft_targets::DEFAULT_K)),
        ("riegel.exponent", s(&pacetok::baselines::DEFAULT_RIEGEL_EXPONENT)),
        ("eval.strata", s(&pacetok::evalcal::DEFAULT_STRATA)),
        ("eval.histogram_bins", s(&pacetok::evalcal::DEFAULT_HISTOGRAM_BINS)),
        ("sweep.settings", "hard,1,4,10,35,adaptive".into()),
        ("ablate.seeds", "1,2,3".into()),
    ];
    let mut out: Vec<(String, String)> = fixed.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    for (name, b) in [
        ("temperature_c", bins.temperature),
        ("humidity_pct", bins.humidity),
        ("wind_kph", bins.wind),
        ("feels_like_c", bins.feels_like),
        ("pace", bins.pace),
    ] {
        let (n, cap) = fb(b);
        out.push((format!("bins.{name}.target_bins"), n));
        out.push((format!("bins.{name}.width_cap"), cap));
    }
    Ok(out)
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_uppercase().replace('.', "_"))
}

/// Parses `key=value` lines; `#` starts a comment.
pub fn parse_file(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl Settings {
    /// Resolves all layers. `flags` are applied last.
    pub fn resolve(
        profile: Option<&str>,
        file: Option<&Path>,
        env: &dyn Fn(&str) -> Option<String>,
        flags: &[(&str, String)],
    ) -> Result<Self> {
        let file_pairs = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                parse_file(&text)?
            }
            None => Vec::new(),
        };
        let profile = flags
            .iter()
            .find(|(k, _)| *k == "profile")
            .map(|(_, v)| v.clone())
            .or_else(|| profile.map(String::from))
            .or_else(|| env(&env_name("profile")))
            .or_else(|| file_pairs.iter().find(|(k, _)| k == "profile").map(|(_, v)| v.clone()))
            .unwrap_or_else(|| "desk".into());
        let mut values: BTreeMap<String, String> =
            defaults(&profile)?.into_iter().collect();
        for (k, v) in file_pairs {
            if k == "profile" {
                continue;
            }
            match values.get_mut(&k) {
                Some(slot) => *slot = v,
                None => return Err(Error::Config(format!("unknown config key {k:?}"))),
            }
        }
        for (k, v) in values.iter_mut() {
            if k == "profile" {
                continue;
            }
            if let Some(e) = env(&env_name(k)) {
                *v = e;
            }
        }
        for (k, v) in flags {
            match values.get_mut(*k) {
                Some(slot) => *slot = v.clone(),
                None => return Err(Error::Config(format!("unknown config key {k:?}"))),
            }
        }
        let s = Settings { values };
        s.validate()?;
        Ok(s)
    }

    /// Canonical text: one `key=value` per line, sorted by key.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse::<T>().map_err(|e| Error::Config(format!("{key}={raw}: {e}")))
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            "off" | "all" | "none" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn profile(&self) -> &str {
        self.raw("profile")
    }

    pub fn generator(&self) -> Result<GeneratorConfig> {
        let g = GeneratorConfig {
            n_runners: self.get("synth.n_runners")?,
            min_events: self.get("synth.min_events")?,
            max_events: self.get("synth.max_events")?,
            mean_extra_events: self.get("synth.mean_extra_events")?,
            baseline_mean: self.get("synth.baseline_mean")?,
            baseline_sd: self.get("synth.baseline_sd")?,
            trend_mean: self.get("synth.trend_mean")?,
            trend_sd: self.get("synth.trend_sd")?,
            temp_threshold_c: self.get("synth.temp_threshold_c")?,
            temp_coef: self.get("synth.temp_coef")?,
            humidity_ref: self.get("synth.humidity_ref")?,
            humidity_coef: self.get("synth.humidity_coef")?,
            wind_coef: self.get("synth.wind_coef")?,
            distance_exponent: self.get("synth.distance_exponent")?,
            gap_mean_weeks: self.get("synth.gap_mean_weeks")?,
            noise_sd: self.get("synth.noise_sd")?,
            seed: self.seed()?,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn split_ratios(&self) -> Result<SplitRatios> {
        let r = SplitRatios {
            train: self.get("split.train")?,
            validation: self.get("split.validation")?,
            test: self.get("split.test")?,
        };
        r.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(r)
    }

    pub fn binning(&self) -> Result<BinningConfig> {
        let fb = |name: &str| -> Result<FeatureBinning> {
            Ok(FeatureBinning {
                target_bins: self.get(&format!("bins.{name}.target_bins"))?,
                width_cap: self.get(&format!("bins.{name}.width_cap"))?,
            })
        };
        Ok(BinningConfig {
            temperature: fb("temperature_c")?,
            humidity: fb("humidity_pct")?,
            wind: fb("wind_kph")?,
            feels_like: fb("feels_like_c")?,
            pace: fb("pace")?,
        })
    }

    pub fn grammar(&self) -> Result<GrammarConfig> {
        Ok(GrammarConfig {
            age_bucket_years: self.get("grammar.age_bucket_years")?,
            age_cap_years: self.get("grammar.age_cap_years")?,
            distance_tolerance: self.get("grammar.distance_tolerance")?,
            cadence_cap: self.get("grammar.cadence_cap")?,
        })
    }

    pub fn ablation(&self) -> Result<Ablation> {
        Ablation::parse(self.raw("window.ablation")).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn layout(&self) -> Result<WindowLayout> {
        Ok(WindowLayout { max_events: self.get("window.max_events")?, ablation: self.ablation()?, seed: self.seed()? })
    }

    pub fn input_embedding(&self) -> Result<InputEmbedding> {
        match self.raw("model.input_embedding") {
            "discrete" => Ok(InputEmbedding::Discrete),
            "soft_gaussian" => Ok(InputEmbedding::SoftGaussian {
                sigma_floor: self.get("model.soft_sigma_floor")?,
                k: self.get("model.soft_k")?,
            }),
            other => Err(Error::Config(format!(
                "model.input_embedding={other}: expected discrete or soft_gaussian"
            ))),
        }
    }

    /// Architecture sized for a vocabulary, pace bins and window capacity.
    pub fn model(&self, vocab_size: usize, pace_bins: usize, window_capacity: usize) -> Result<ModelConfig> {
        let m = ModelConfig {
            n_layers: self.get("model.n_layers")?,
            n_heads: self.get("model.n_heads")?,
            d_model: self.get("model.d_model")?,
            d_ff: self.get("model.d_ff")?,
            dropout: self.get("model.dropout")?,
            window_capacity,
            vocab_size,
            pace_bins,
            input_embedding: self.input_embedding()?,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let anneal = match self.optional::<f64>("train.sigma_anneal.start_scale")? {
            Some(start_scale) => Some(SigmaAnneal { start_scale, end_step: self.get("train.sigma_anneal.end_step")? }),
            None => None,
        };
        let t = TrainConfig {
            batch_size: self.get("train.batch_size")?,
            base_lr: self.get("train.base_lr")?,
            weight_decay: self.get("train.weight_decay")?,
            beta1: self.get("train.beta1")?,
            beta2: self.get("train.beta2")?,
            eps: self.get("train.eps")?,
            max_steps: self.get("train.max_steps")?,
            eval_interval: self.get("train.eval_interval")?,
            eval_limit: self.optional("train.eval_limit")?,
            grad_clip: self.optional("train.grad_clip")?,
            sigma_anneal: anneal,
            seed: self.seed()?,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn selection(&self) -> Result<Selection> {
        Selection::parse(self.raw("train.select"))
    }

    pub fn smoothing(&self) -> Result<SmoothingConfig> {
        let s = match self.raw("smoothing.mode") {
            "hard" => SmoothingConfig::Hard,
            "fixed" => SmoothingConfig::Fixed { sigma: self.get("smoothing.sigma")? },
            "adaptive" => {
                SmoothingConfig::Adaptive { sigma_floor: self.get("smoothing.sigma_floor")?, k: self.get("smoothing.k")? }
            }
            other => return Err(Error::Config(format!("smoothing.mode={other}: expected hard, fixed or adaptive"))),
        };
        s.validate()?;
        Ok(s)
    }

    /// Smoothing settings for the sweep: `hard`, `adaptive`, or a fixed σ.
    pub fn sweep(&self) -> Result<Vec<SmoothingConfig>> {
        let base = self.smoothing_adaptive()?;
        self.raw("sweep.settings")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| match s {
                "hard" => Ok(SmoothingConfig::Hard),
                "adaptive" => Ok(base),
                v => v
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("sweep.settings entry {v:?}: {e}")))
                    .map(|sigma| SmoothingConfig::Fixed { sigma }),
            })
            .collect::<Result<Vec<_>>>()
            .and_then(|v| {
                v.iter().try_for_each(SmoothingConfig::validate)?;
                if v.is_empty() {
                    Err(Error::Config("sweep.settings is empty".into()))
                } else {
                    Ok(v)
                }
            })
    }

    fn smoothing_adaptive(&self) -> Result<SmoothingConfig> {
        Ok(SmoothingConfig::Adaptive { sigma_floor: self.get("smoothing.sigma_floor")?, k: self.get("smoothing.k")? })
    }

    pub fn ablate_seeds(&self) -> Result<Vec<u64>> {
        let seeds = self
            .raw("ablate.seeds")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<u64>().map_err(|e| Error::Config(format!("ablate.seeds entry {s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if seeds.is_empty() {
            return Err(Error::Config("ablate.seeds is empty".into()));
        }
        Ok(seeds)
    }

    pub fn riegel(&self) -> Result<pacetok::baselines::RiegelConfig> {
        let r = pacetok::baselines::RiegelConfig { exponent: self.get("riegel.exponent")? };
        r.validate()?;
        Ok(r)
    }

    pub fn strata(&self) -> Result<(usize, usize)> {
        Ok((self.get("eval.strata")?, self.get("eval.histogram_bins")?))
    }

    fn validate(&self) -> Result<()> {
        self.seed()?;
        self.split_ratios()?;
        self.binning()?;
        self.grammar()?;
        self.layout()?;
        self.input_embedding()?;
        self.train()?;
        self.selection()?;
        self.smoothing()?;
        self.sweep()?;
        self.ablate_seeds()?;
        self.riegel()?;
        self.strata()?;
        Ok(())
    }
}
