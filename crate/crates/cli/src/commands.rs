use std::fs;
use std::path::{Path, PathBuf};

use pacetok::evalcal::{evaluate_forecast, ks_statistic, point_metrics, stratified_report, EvalRecord, Forecast, PointMetrics};
use pacetok::grammar::{read_dataset, write_dataset, Ablation, RunnerHistory, Split, Vocabulary, WindowLayout};
use pacetok::model::checkpoint::SelectionInfo;
use pacetok::model::train::Snapshot;
use pacetok::model::{dump_diagnostics, Checkpoint, ModelConfig, Params, Selection, TrainOutcome};
use pacetok::pipeline::{
    build_vocabulary, encode_histories, fit_bins, model_records, naive_records, prepare_with_vocab, riegel_records,
    split_histories, train_prepared, Prepared,
};
use pacetok::quantizer::BinSpec;
use pacetok::report::{
    bar_chart, calibration_tables, heatmap, line_plot, metric_cells, metrics_table, num, records_from_table,
    records_table, Table,
};
use pacetok::soft_targets::{one_hot, SmoothingConfig};
use pacetok::synthdata::{generate, oracle_pdf, GroundTruth};
use pacetok::{Error, Result, Scalar};

use crate::config::Settings;

/// Output directory of one invocation plus its deterministic log.
pub struct Run {
    pub settings: Settings,
    pub out: PathBuf,
    command: &'static str,
    log: Vec<String>,
    manifest_hash: Option<String>,
}

impl Run {
    pub fn new(settings: Settings, out: PathBuf, command: &'static str) -> Result<Self> {
        fs::create_dir_all(&out).map_err(|e| Error::Data(format!("cannot create {}: {e}", out.display())))?;
        Ok(Run { settings, out, command, log: Vec::new(), manifest_hash: None })
    }

    fn note(&mut self, msg: String) {
        log::info!("{msg}");
        self.log.push(msg);
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn table(&mut self, name: &str, t: &Table) -> Result<()> {
        t.write(&self.path(name))?;
        self.note(format!("wrote {name}"));
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        fs::write(self.path(name), body)?;
        self.note(format!("wrote {name}"));
        Ok(())
    }

    /// Writes the resolved config, run metadata and log.
    pub fn finish(self) -> Result<()> {
        fs::write(self.path("config.resolved"), self.settings.to_text())?;
        let mut meta = format!(
            "command={}\nversion={}\nseed={}\nprofile={}\n",
            self.command,
            env!("CARGO_PKG_VERSION"),
            self.settings.seed()?,
            self.settings.profile()
        );
        if let Some(h) = &self.manifest_hash {
            meta.push_str(&format!("manifest_hash={h}\n"));
        }
        fs::write(self.path("run.txt"), meta)?;
        fs::write(self.path("run.log"), self.log.join("\n") + "\n")?;
        Ok(())
    }
}

fn load_histories(path: &Path) -> Result<Vec<RunnerHistory>> {
    let h = read_dataset(path)?;
    if h.is_empty() {
        return Err(Error::Data(format!("{} holds no runners", path.display())));
    }
    Ok(h)
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read vocabulary {}: {e}", path.display())))?;
    Vocabulary::from_manifest(&text)
}

/// Splits the data and encodes windows, fitting a vocabulary on the
/// training split unless a manifest is given.
fn prepare(run: &mut Run, data: &Path, vocab: Option<&Path>, layout: WindowLayout) -> Result<Prepared> {
    let s = &run.settings;
    let splits = split_histories(load_histories(data)?, &s.split_ratios()?, s.seed()?)?;
    let vocab = match vocab {
        Some(p) => load_vocab(p)?,
        None => build_vocabulary(&fit_bins(&splits.train, &s.binning()?)?, &s.grammar()?)?,
    };
    let p = prepare_with_vocab(splits, vocab, layout)?;
    run.manifest_hash = Some(p.vocab.manifest_hash());
    run.note(format!(
        "runners train/validation/test = {}/{}/{}; windows {}/{}/{}; skipped out-of-support {}/{}/{}",
        p.histories.train.len(),
        p.histories.validation.len(),
        p.histories.test.len(),
        p.train.windows.len(),
        p.validation.windows.len(),
        p.test.windows.len(),
        p.train.skipped,
        p.validation.skipped,
        p.test.skipped
    ));
    Ok(p)
}

fn score(records: &[EvalRecord]) -> Result<(f64, PointMetrics)> {
    let pits: Vec<f64> = records.iter().map(|r| r.pit).collect();
    Ok((ks_statistic(&pits)?, point_metrics(records)?))
}

fn model_config(run: &Run, p: &Prepared) -> Result<ModelConfig> {
    run.settings.model(p.vocab.size as usize, p.pace_bins().len(), p.layout.capacity())
}

pub fn gen_data(run: &mut Run) -> Result<()> {
    let cfg = run.settings.generator()?;
    let (histories, truth) = generate(&cfg)?;
    write_dataset(&run.path("data.jsonl"), &histories)?;
    truth.save(&run.path("truth.json"))?;
    let events: usize = histories.iter().map(|h| h.events.len()).sum();
    run.note(format!("generated {} runners, {events} events", histories.len()));
    run.note("wrote data.jsonl".into());
    run.note("wrote truth.json".into());
    Ok(())
}

pub fn fit_bins_cmd(run: &mut Run, data: &Path) -> Result<()> {
    let s = &run.settings;
    let splits = split_histories(load_histories(data)?, &s.split_ratios()?, s.seed()?)?;
    let bins = fit_bins(&splits.train, &s.binning()?)?;
    let mut assignment = Table::new("splits", &["runner_id", "split"]);
    for (split, hs) in [(Split::Train, &splits.train), (Split::Validation, &splits.validation), (Split::Test, &splits.test)] {
        for h in hs {
            assignment.push(vec![h.runner_id.clone(), split.name().into()]);
        }
    }
    let mut summary = Table::new("bins", &["feature", "bins", "lower", "upper", "max_width", "width_cap", "splits"]);
    for b in &bins {
        summary.push(vec![
            b.feature_name.clone(),
            b.len().to_string(),
            num(b.lower()),
            num(b.upper()),
            num(b.max_width()),
            num(b.width_cap),
            b.splits.to_string(),
        ]);
    }
    run.text("bins.json", &(serde_json::to_string_pretty(&bins)? + "\n"))?;
    run.table("bins.csv", &summary)?;
    run.table("splits.csv", &assignment)?;
    Ok(())
}

pub fn build_vocab(run: &mut Run, bins: &Path) -> Result<()> {
    let text = fs::read_to_string(bins).map_err(|e| Error::Data(format!("cannot read {}: {e}", bins.display())))?;
    let specs: Vec<BinSpec<f64>> = serde_json::from_str(&text)?;
    for s in &specs {
        s.validate()?;
    }
    let vocab = build_vocabulary(&specs, &run.settings.grammar()?)?;
    let hash = vocab.manifest_hash();
    run.text("vocab.json", &vocab.manifest_text())?;
    run.text("vocab.sha256", &format!("{hash}\n"))?;
    let mut t = Table::new("vocab", &["section", "start", "len"]);
    for s in &vocab.sections {
        t.push(vec![s.name.clone(), s.start.to_string(), s.len.to_string()]);
    }
    run.table("vocab.csv", &t)?;
    run.note(format!("vocabulary size {} (PAD = 0)", vocab.size));
    run.manifest_hash = Some(hash);
    Ok(())
}

fn checkpoint_for(
    run: &Run,
    snap: &Snapshot<f32>,
    selection: Selection,
    cfg: &ModelConfig,
    p: &Prepared,
    smoothing: &SmoothingConfig,
) -> Result<Checkpoint> {
    Ok(Checkpoint::new(
        &snap.params,
        cfg,
        &run.settings.train()?,
        &p.layout,
        smoothing,
        &p.vocab.manifest_hash(),
        Some(SelectionInfo { selection, step: snap.step, metric: snap.metric(selection) }),
    ))
}

fn log_table(outcome: &TrainOutcome<f32>) -> Table {
    let mut t = Table::new("train_log", &["step", "train_loss", "median_mae", "ks"]);
    for e in &outcome.log {
        t.push(vec![e.step.to_string(), e.train_loss.map_or(String::new(), num), num(e.median_mae), num(e.ks)]);
    }
    t
}

pub fn train_cmd(run: &mut Run, data: &Path, vocab: Option<&Path>) -> Result<()> {
    let layout = run.settings.layout()?;
    let p = prepare(run, data, vocab, layout)?;
    let cfg = model_config(run, &p)?;
    let tc = run.settings.train()?;
    let smoothing = run.settings.smoothing()?;
    let selection = run.settings.selection()?;
    run.note(format!(
        "training {} parameters for {} steps, smoothing {}, ablation {}",
        Params::<f32>::zeros(&cfg).num_parameters(),
        tc.max_steps,
        smoothing.label(),
        layout.ablation.name()
    ));
    let outcome = train_prepared::<f32>(&p, &cfg, &tc, &smoothing)?;
    run.table("train_log.csv", &log_table(&outcome))?;
    for sel in [Selection::BestMedianMae, Selection::BestKs] {
        let c = checkpoint_for(run, outcome.selected(sel), sel, &cfg, &p, &smoothing)?;
        c.save(&run.path(&format!("checkpoint_{}.json", sel.name())))?;
        if sel == selection {
            c.save(&run.path("checkpoint.json"))?;
        }
    }
    run.note(format!("wrote checkpoints; selected {} at step {}", selection.name(), outcome.selected(selection).step));

    let snap = outcome.selected(selection);
    let mut metrics = metrics_table("metrics", &["predictor", "split", "step"]);
    let model = model_records(&snap.params, &cfg, &p, Split::Validation)?;
    let (ks, m) = score(&model)?;
    metrics.push([vec!["model".into(), "validation".into(), snap.step.to_string()], metric_cells(model.len(), ks, &m)].concat());
    for (name, records) in [
        ("naive_mean", naive_records(&p, Split::Validation)?),
        ("riegel", riegel_records(&p, Split::Validation, &run.settings.riegel()?)?),
    ] {
        let (ks, m) = score(&records)?;
        metrics.push([vec![name.into(), "validation".into(), String::new()], metric_cells(records.len(), ks, &m)].concat());
    }
    run.table("metrics.csv", &metrics)?;
    if let Some(reason) = outcome.halted {
        return Err(Error::Numerical(format!("training halted ({reason}); last good checkpoint retained")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Predictor {
    Model,
    NaiveMean,
    Riegel,
    /// One-hot PDF on the bin holding the training mean.
    Constant,
    /// Generating distribution from a ground-truth sidecar.
    Oracle,
}

impl Predictor {
    fn name(self) -> &'static str {
        match self {
            Predictor::Model => "model",
            Predictor::NaiveMean => "naive_mean",
            Predictor::Riegel => "riegel",
            Predictor::Constant => "constant",
            Predictor::Oracle => "oracle",
        }
    }
}

pub struct EvaluateArgs<'a> {
    pub data: &'a Path,
    pub vocab: Option<&'a Path>,
    pub checkpoint: Option<&'a Path>,
    pub truth: Option<&'a Path>,
    pub predictor: Predictor,
    pub split: Split,
}

fn model_eval<T: Scalar>(ckpt: &Checkpoint, p: &Prepared, split: Split) -> Result<Vec<EvalRecord>> {
    model_records(&ckpt.params::<T>()?, &ckpt.model, p, split)
}

fn find_history<'a>(hs: &'a [RunnerHistory], id: &str) -> Result<&'a RunnerHistory> {
    hs.iter()
        .find(|h| h.runner_id == id)
        .ok_or_else(|| Error::Data(format!("runner {id} not found in split")))
}

pub fn evaluate(run: &mut Run, a: EvaluateArgs) -> Result<()> {
    let ckpt = match (a.predictor, a.checkpoint) {
        (Predictor::Model, None) => return Err(Error::Config("--checkpoint is required for the model predictor".into())),
        (_, Some(path)) => Some(Checkpoint::load(path)?),
        _ => None,
    };
    let layout = ckpt.as_ref().map_or(run.settings.layout(), |c| Ok(c.layout))?;
    let p = prepare(run, a.data, a.vocab, layout)?;
    if let Some(c) = &ckpt {
        c.ensure_manifest(&p.vocab.manifest_hash())?;
    }
    let spec = p.pace_bins().clone();
    let windows = p.windows(a.split);
    let records = match a.predictor {
        Predictor::Model => {
            let c = ckpt.as_ref().expect("checked above");
            match c.precision.as_str() {
                "f64" => model_eval::<f64>(c, &p, a.split)?,
                _ => model_eval::<f32>(c, &p, a.split)?,
            }
        }
        Predictor::NaiveMean => naive_records(&p, a.split)?,
        Predictor::Riegel => riegel_records(&p, a.split, &run.settings.riegel()?)?,
        Predictor::Constant => {
            let bin = spec.locate(p.naive_mean)?.ok_or_else(|| Error::Data("training mean outside the pace bins".into()))?;
            let pdf = Forecast::Pdf(one_hot(spec.len(), bin));
            windows.iter().map(|w| evaluate_forecast(&pdf, &spec, w.label_value)).collect::<Result<_>>()?
        }
        Predictor::Oracle => {
            let path = a.truth.ok_or_else(|| Error::Config("--truth is required for the oracle predictor".into()))?;
            let truth = GroundTruth::load(path)?;
            let hs = p.histories.get(a.split);
            windows
                .iter()
                .map(|w| {
                    let pdf = oracle_pdf(&truth, find_history(hs, &w.runner_id)?, w.target_index, &spec)?;
                    evaluate_forecast(&Forecast::Pdf(pdf), &spec, w.label_value)
                })
                .collect::<Result<_>>()?
        }
    };
    let (ks, m) = score(&records)?;
    let mut metrics = metrics_table("metrics", &["predictor", "split"]);
    metrics.push([vec![a.predictor.name().into(), a.split.name().into()], metric_cells(records.len(), ks, &m)].concat());
    run.table("metrics.csv", &metrics)?;
    run.table("examples.csv", &records_table(&records))?;
    write_calibration(run, &records)
}

fn write_calibration(run: &mut Run, records: &[EvalRecord]) -> Result<()> {
    let (strata, bins) = run.settings.strata()?;
    let report = stratified_report(records, strata, bins)?;
    for t in calibration_tables(&report) {
        run.table(&format!("{}.csv", t.kind), &t)?;
    }
    run.text("qq.svg", &line_plot("PIT Q-Q", "uniform quantile", "PIT quantile", &[("model".into(), report.qq.clone())], true))?;
    let fractions: Vec<f64> = report.occupancy.iter().map(|&c| c as f64 / report.n as f64).collect();
    run.text("occupancy.svg", &bar_chart("Quantile occupancy", "PIT bin", "fraction", &fractions))?;
    let series: Vec<(String, Vec<(f64, f64)>)> = report
        .strata
        .iter()
        .map(|s| {
            let mut pts = vec![(0.0, 0.0)];
            pts.extend(&s.reliability);
            (format!("stratum {} ({:.0}-{:.0})", s.index, s.y_min, s.y_max), pts)
        })
        .collect();
    run.text("reliability.svg", &line_plot("Reliability by true-pace stratum", "nominal level", "observed", &series, true))?;
    run.note(format!("KS {} over {} samples", num(report.ks), report.n));
    Ok(())
}

pub fn report(run: &mut Run, from: &Path) -> Result<()> {
    let records = records_from_table(&Table::read(&from.join("examples.csv"))?)?;
    if let Ok(m) = Table::read(&from.join("metrics.csv")) {
        run.table("metrics.csv", &m)?;
    }
    run.table("examples.csv", &records_table(&records))?;
    write_calibration(run, &records)
}

fn best_row(
    p: &Prepared,
    cfg: &ModelConfig,
    outcome: &TrainOutcome<f32>,
    selection: Selection,
) -> Result<(usize, usize, f64, PointMetrics)> {
    let snap = outcome.selected(selection);
    let records = model_records(&snap.params, cfg, p, Split::Validation)?;
    let (ks, m) = score(&records)?;
    Ok((snap.step, records.len(), ks, m))
}

pub fn sweep_sigma(run: &mut Run, data: &Path, vocab: Option<&Path>) -> Result<()> {
    let layout = run.settings.layout()?;
    let p = prepare(run, data, vocab, layout)?;
    let cfg = model_config(run, &p)?;
    let tc = run.settings.train()?;
    let mut rows = Vec::new();
    for smoothing in run.settings.sweep()? {
        let outcome = train_prepared::<f32>(&p, &cfg, &tc, &smoothing)?;
        let (step, n, ks, m) = best_row(&p, &cfg, &outcome, Selection::BestKs)?;
        run.note(format!("{}: best KS {} at step {step}", smoothing.label(), num(ks)));
        rows.push((smoothing.label(), step, n, ks, m));
    }
    rows.sort_by(|a, b| a.3.total_cmp(&b.3));
    let mut t = metrics_table("leaderboard", &["rank", "smoothing", "selection", "step"]);
    for (i, (label, step, n, ks, m)) in rows.iter().enumerate() {
        t.push([vec![(i + 1).to_string(), label.clone(), "best_ks".into(), step.to_string()], metric_cells(*n, *ks, m)].concat());
    }
    run.table("leaderboard.csv", &t)
}

pub fn ablate(run: &mut Run, data: &Path, vocab: Option<&Path>) -> Result<()> {
    let base = run.settings.layout()?;
    let p = prepare(run, data, vocab, base)?;
    let smoothing = run.settings.smoothing()?;
    let selection = run.settings.selection()?;
    let mut t = metrics_table("ablation", &["ablation", "seed", "selection", "step"]);
    let modes = [Ablation::None, Ablation::ShuffleEvents, Ablation::DropTimeTokens];
    let mut sums = vec![(0.0, 0.0, 0usize); modes.len()];
    for seed in run.settings.ablate_seeds()? {
        for (i, &ablation) in modes.iter().enumerate() {
            let q = p.relayout(WindowLayout { ablation, seed, ..base })?;
            let cfg = model_config(run, &q)?;
            let tc = pacetok::model::TrainConfig { seed, ..run.settings.train()? };
            let outcome = train_prepared::<f32>(&q, &cfg, &tc, &smoothing)?;
            let (step, n, ks, m) = best_row(&q, &cfg, &outcome, selection)?;
            run.note(format!("{} seed {seed}: median MAE {}", ablation.name(), num(m.median.mae)));
            sums[i].0 += m.median.mae;
            sums[i].1 += ks;
            sums[i].2 += 1;
            t.push(
                [vec![ablation.name().into(), seed.to_string(), selection.name().into(), step.to_string()], metric_cells(n, ks, &m)]
                    .concat(),
            );
        }
    }
    run.table("ablation.csv", &t)?;
    let mut summary = Table::new("ablation_summary", &["ablation", "runs", "mean_median_mae", "mean_ks"]);
    for (mode, (mae, ks, n)) in modes.iter().zip(sums) {
        summary.push(vec![mode.name().into(), n.to_string(), num(mae / n as f64), num(ks / n as f64)]);
    }
    run.table("ablation_summary.csv", &summary)
}

pub struct DiagnosticsArgs<'a> {
    pub data: &'a Path,
    pub vocab: Option<&'a Path>,
    pub checkpoint: &'a Path,
    pub split: Split,
    pub runner: Option<&'a str>,
    pub target: Option<usize>,
}

pub fn diagnostics(run: &mut Run, a: DiagnosticsArgs) -> Result<()> {
    let ckpt = Checkpoint::load(a.checkpoint)?;
    let mut p = prepare(run, a.data, a.vocab, ckpt.layout)?;
    ckpt.ensure_manifest(&p.vocab.manifest_hash())?;
    if let Some(id) = a.runner {
        let h = find_history(p.histories.get(a.split), id)?.clone();
        let enc = encode_histories(std::slice::from_ref(&h), &p.vocab, &p.layout)?;
        match a.split {
            Split::Train => p.train = enc,
            Split::Validation => p.validation = enc,
            Split::Test => p.test = enc,
        }
    }
    let windows = p.windows(a.split);
    let window = match a.target {
        Some(t) => windows.iter().find(|w| w.target_index == t),
        None => windows.iter().max_by_key(|w| (w.real_len, std::cmp::Reverse(w.runner_id.clone()))),
    }
    .ok_or_else(|| Error::Data("no window matches the requested runner/target".into()))?;
    let d = match ckpt.precision.as_str() {
        "f64" => dump_diagnostics(&ckpt.params::<f64>()?, &ckpt.model, &p.vocab, window)?,
        _ => dump_diagnostics(&ckpt.params::<f32>()?, &ckpt.model, &p.vocab, window)?,
    };
    run.note(format!("window runner {} target {} ({} tokens)", d.runner_id, d.target_index, d.tokens.len()));
    run.text("diagnostics.json", &(serde_json::to_string_pretty(&d)? + "\n"))?;
    for m in &d.attention {
        let title = format!("Attention layer {} head {}", m.layer, m.head);
        run.text(&format!("attention_l{}_h{}.svg", m.layer, m.head), &heatmap(&title, &m.weights))?;
    }
    let mut contrib = Table::new("contributions", &["layer", "residual_in", "attention", "feed_forward"]);
    for c in &d.contributions {
        contrib.push(vec![c.layer.to_string(), num(c.residual_in), num(c.attention), num(c.feed_forward)]);
    }
    run.table("contributions.csv", &contrib)?;
    let mut hist = Table::new("softmax", &["bin", "lo", "hi", "prob"]);
    for (i, &pr) in d.probs.iter().enumerate() {
        hist.push(vec![i.to_string(), num(d.bin_edges[i]), num(d.bin_edges[i + 1]), num(pr)]);
    }
    run.table("softmax.csv", &hist)?;
    run.text("softmax.svg", &bar_chart("Predicted pace distribution", "pace bin", "probability", &d.probs))
}
