//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset,
//! e.g. `cargo test -p pacetok --test acceptance -- 1 2 6`.

use std::panic;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pacetok::baselines::{riegel_time, RiegelConfig};
use pacetok::evalcal::{evaluate_forecast, ks_statistic, occupancy, point_metrics, EvalRecord, Forecast};
use pacetok::grammar::{Ablation, Split, SplitRatios};
use pacetok::model::transformer::all_position_logits;
use pacetok::model::{backward, forward, InputEmbedding, ModelConfig, ModelInput, Params, TrainConfig};
use pacetok::pipeline::{
    fit_bins, layout, model_config, model_records, naive_records, prepare, split_histories, train_prepared,
    BinningConfig, GrammarConfig, Prepared,
};
use pacetok::quantizer::{fit_balanced, BinSpec};
use pacetok::report::{metric_cells, metrics_table};
use pacetok::soft_targets::{
    adaptive_sigma, gaussian_bin_masses, gaussian_integrated_target, smoothed_cross_entropy,
    smoothed_cross_entropy_with_grad, softmax, SmoothingConfig,
};
use pacetok::synthdata::{generate, oracle_pdf_scaled, GeneratorConfig};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn random_edges(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(1..40);
    let mut edges = vec![rng.random_range(-500.0..500.0)];
    for _ in 0..n {
        let last = *edges.last().unwrap();
        edges.push(last + rng.random_range(0.05..30.0));
    }
    edges
}

fn soft_targets() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_raw: f64 = 0.0;
    let mut worst_norm: f64 = 0.0;
    for _ in 0..1000 {
        let edges = random_edges(&mut rng);
        let (lo, hi) = (edges[0], *edges.last().unwrap());
        let y = rng.random_range(lo..hi);
        let sigma = rng.random_range(0.05..50.0);
        let raw: f64 = gaussian_bin_masses(y, sigma, &edges).iter().sum();
        worst_raw = worst_raw.max((raw - (phi((hi - y) / sigma) - phi((lo - y) / sigma))).abs());
        let spec = BinSpec::from_edges("y", edges, f64::INFINITY).map_err(|e| e.to_string())?;
        let t = gaussian_integrated_target(y, &spec, &SmoothingConfig::Fixed { sigma }).map_err(|e| e.to_string())?;
        worst_norm = worst_norm.max((t.probs.iter().sum::<f64>() - 1.0).abs());
    }
    ensure(worst_raw < 1e-9, format!("raw mass error {worst_raw:e}"))?;
    ensure(worst_norm < 1e-9, format!("normalized sum error {worst_norm:e}"))?;

    let spec = BinSpec::from_edges("y", vec![0.0, 1.0, 2.0, 3.0], f64::INFINITY).unwrap();
    let t = gaussian_integrated_target(1.5, &spec, &SmoothingConfig::Fixed { sigma: 1.0 }).unwrap();
    let raw = [phi(-0.5) - phi(-1.5), phi(0.5) - phi(-0.5), phi(1.5) - phi(0.5)];
    let total: f64 = raw.iter().sum();
    let worst = t.probs.iter().zip(raw).map(|(p, r)| (p - r / total).abs()).fold(0.0, f64::max);
    ensure(worst < 1e-6, format!("worked example off by {worst:e}"))?;
    Ok(format!(
        "max raw error {worst_raw:.1e}, max sum error {worst_norm:.1e}, worked example [{:.6}, {:.6}, {:.6}]",
        t.probs[0], t.probs[1], t.probs[2]
    ))
}

fn adaptive() -> Check {
    let s = |w: f64, floor: f64, k: f64| adaptive_sigma(w, floor, k).unwrap();
    ensure(s(0.0, 2.7, 1.5) == 2.7, "w = 0 must give the floor")?;
    ensure(s(7.0, 2.7, 0.0) == 2.7, "k = 0 must give the floor")?;
    let v = s(2.0, 2.7, 1.5);
    ensure((v - 4.0361).abs() < 1e-4, format!("sigma(2.7, 1.5, 2) = {v}"))?;
    let grid: Vec<f64> = (0..100).map(|i| s(i as f64 * 0.5, 2.7, 1.5)).collect();
    ensure(grid.windows(2).all(|w| w[1] > w[0]), "not increasing in w")?;
    Ok(format!("sigma(2.7, 1.5, 2) = {v:.5}; strictly increasing over 100 widths"))
}

fn gradients() -> Check {
    let start = Instant::now();
    let cfg = ModelConfig::tiny(17, 6, 23);
    ensure(cfg.n_layers == 2 && cfg.d_model == 8, "tiny profile must be 2 layers of width 8")?;
    let mut params = Params::<f64>::init(&cfg, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for t in &mut params.tensors {
        if !t.decay {
            for v in &mut t.data {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    let mut ids: Vec<u32> = (0..14).map(|_| rng.random_range(1..17)).collect();
    ids.extend([0, 0]);
    let input = ModelInput::from_ids(&ids);
    let pp = 13;
    let target = [0.02, 0.08, 0.45, 0.3, 0.1, 0.05];
    let loss = |p: &Params<f64>| {
        let (logits, _) = forward::<f64, ChaCha8Rng>(p, &cfg, &input, pp, None).unwrap();
        smoothed_cross_entropy(&logits, &target).unwrap()
    };
    let (logits, cache) = forward::<f64, ChaCha8Rng>(&params, &cfg, &input, pp, None).map_err(|e| e.to_string())?;
    let (_, dlogits) = smoothed_cross_entropy_with_grad(&logits, &target).unwrap();
    let expected: Vec<f64> = softmax(&logits).iter().zip(&target).map(|(p, t)| p - t).collect();
    let head_err = dlogits.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(head_err < 1e-10, format!("loss gradient differs from softmax - T by {head_err:e}"))?;

    let mut grads = params.zeros_like();
    backward(&params, &cfg, &input, &cache, &dlogits, &mut grads).map_err(|e| e.to_string())?;
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for (ti, tensor) in params.tensors.iter().enumerate() {
        let (mut err, mut scale) = (0.0, 0.0);
        for j in 0..tensor.data.len() {
            let mut up = params.clone();
            up.tensors[ti].data[j] += eps;
            let mut dn = params.clone();
            dn.tensors[ti].data[j] -= eps;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * eps);
            let an = grads.tensors[ti].data[j];
            err += (fd - an).powi(2);
            scale += fd.powi(2).max(an.powi(2));
        }
        if scale.sqrt() > 1e-12 {
            let rel = err.sqrt() / scale.sqrt();
            ensure(rel < 1e-4, format!("{}: relative error {rel:e}", tensor.name))?;
            worst = worst.max(rel);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 300.0, format!("took {secs:.0} s"))?;
    Ok(format!(
        "{} tensors, worst relative error {worst:.1e}, head gradient error {head_err:.1e}, {secs:.1} s",
        params.tensors.len()
    ))
}

fn small_prepared(n_runners: usize, max_events: usize, seed: u64) -> Prepared {
    let (h, _) = generate(&GeneratorConfig { n_runners, seed, ..Default::default() }).unwrap();
    prepare(h, &SplitRatios::default(), seed, &BinningConfig::default(), &GrammarConfig::default(), layout(max_events, Ablation::None, seed))
        .unwrap()
}

fn causality() -> Check {
    let p = small_prepared(300, 12, 4);
    let cfg = model_config("desk", &p, InputEmbedding::Discrete).unwrap();
    let params = Params::<f32>::init(&cfg, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let windows: Vec<_> = p.train.windows.iter().filter(|w| w.real_len > 1).take(100).collect();
    ensure(windows.len() == 100, "need 100 windows")?;
    let mut perturbed = 0;
    for w in &windows {
        let base = ModelInput::<f32>::from_window(w, &p.vocab, &cfg, None).unwrap();
        let (logits, c0) = forward::<f32, ChaCha8Rng>(&params, &cfg, &base, w.prediction_position, None).unwrap();
        let all0 = all_position_logits(&params, &cfg, &c0);
        let cut = rng.random_range(0..w.real_len - 1);
        let mut ids = w.real_tokens().to_vec();
        for id in &mut ids[cut + 1..] {
            *id = rng.random_range(1..p.vocab.size);
        }
        let (_, c1) = forward::<f32, ChaCha8Rng>(&params, &cfg, &ModelInput::from_ids(&ids), w.prediction_position, None).unwrap();
        let all1 = all_position_logits(&params, &cfg, &c1);
        ensure(all0[..=cut] == all1[..=cut], format!("future tokens changed outputs in window {}/{}", w.runner_id, w.target_index))?;
        perturbed += 1;

        let full = ModelInput::<f32>::from_window(w, &p.vocab, &cfg, Some(w.token_ids.len())).unwrap();
        let (padded, _) = forward::<f32, ChaCha8Rng>(&params, &cfg, &full, w.prediction_position, None).unwrap();
        ensure(padded == logits, format!("PAD extension changed logits in window {}/{}", w.runner_id, w.target_index))?;
    }
    Ok(format!("{perturbed} windows: no future influence, PAD-extended logits bit-identical"))
}

fn calibration_oracle() -> Check {
    let start = Instant::now();
    let (h, truth) = generate(&GeneratorConfig { n_runners: 2500, seed: 11, ..Default::default() }).unwrap();
    let splits = split_histories(h.clone(), &SplitRatios::default(), 11).unwrap();
    let bins = fit_bins(&splits.train, &BinningConfig::default()).unwrap();
    let spec = bins.last().unwrap().clone();
    let mut pits = [Vec::new(), Vec::new()];
    'outer: for history in &h {
        for i in 0..history.events.len() {
            if pits[0].len() == 10_000 {
                break 'outer;
            }
            let y = history.events[i].pace;
            for (slot, scale) in [(0, 1.0), (1, 0.5)] {
                let pdf = oracle_pdf_scaled(&truth, history, i, &spec, scale).map_err(|e| e.to_string())?;
                pits[slot].push(evaluate_forecast(&Forecast::Pdf(pdf), &spec, y).unwrap().pit);
            }
        }
    }
    ensure(pits[0].len() == 10_000, format!("only {} samples", pits[0].len()))?;
    let ks = ks_statistic(&pits[0]).unwrap();
    let ks_sharp = ks_statistic(&pits[1]).unwrap();
    let edge_share = |p: &[f64]| {
        let occ = occupancy(p, 10);
        (occ[0] + occ[9]) as f64 / p.len() as f64
    };
    let (edge, edge_sharp) = (edge_share(&pits[0]), edge_share(&pits[1]));
    let secs = start.elapsed().as_secs_f64();
    ensure(ks < 0.02, format!("oracle KS {ks:.4}"))?;
    ensure(ks_sharp > 0.05, format!("overconfident KS {ks_sharp:.4}"))?;
    ensure(edge_sharp > 0.2 && edge_sharp > edge, format!("extreme-decile share {edge_sharp:.3} vs {edge:.3}"))?;
    ensure(secs < 120.0, format!("took {secs:.0} s"))?;
    Ok(format!(
        "KS {ks:.4}; variance halved KS {ks_sharp:.4}, extreme-decile PIT share {edge_sharp:.3} (oracle {edge:.3}); {secs:.1} s"
    ))
}

fn ks_units() -> Check {
    let u: Vec<f64> = (1..=10).map(|i| (i as f64 - 0.5) / 10.0).collect();
    let a = ks_statistic(&u).unwrap();
    let b = ks_statistic(&[0.5; 4]).unwrap();
    let c = ks_statistic(&[0.0]).unwrap();
    ensure((a - 0.05).abs() < 1e-15, format!("mid-grid KS {a}"))?;
    ensure(b == 0.5, format!("constant KS {b}"))?;
    ensure(c == 1.0, format!("single-zero KS {c}"))?;
    Ok(format!("{a}, {b}, {c}"))
}

fn riegel() -> Check {
    let cfg = RiegelConfig::default();
    let t = riegel_time((5000.0, 1200.0), 10_000.0, &cfg).unwrap();
    let oracle = 1200.0 * 2f64.powf(1.06);
    ensure((t - 2501.9).abs() <= 0.1 && (t - oracle).abs() < 1e-9, format!("{t}"))?;
    let same = riegel_time((4321.0, 987.6), 4321.0, &cfg).unwrap();
    ensure(same == 987.6, format!("identity gave {same}"))?;
    Ok(format!("{t:.2} s; identity exact"))
}

struct DeskRun {
    median_mae: f64,
    best_ks: f64,
}

fn desk_run(p: &Prepared, seed: u64, smoothing: &SmoothingConfig) -> DeskRun {
    let cfg = model_config("desk", p, InputEmbedding::Discrete).unwrap();
    let tc = TrainConfig { max_steps: 1000, seed, ..TrainConfig::desk() };
    let out = train_prepared::<f32>(p, &cfg, &tc, smoothing).unwrap();
    let by_mae = model_records(&out.best_median_mae.params, &cfg, p, Split::Test).unwrap();
    let by_ks = model_records(&out.best_ks.params, &cfg, p, Split::Test).unwrap();
    let pits: Vec<f64> = by_ks.iter().map(|r| r.pit).collect();
    DeskRun { median_mae: point_metrics(&by_mae).unwrap().median.mae, best_ks: ks_statistic(&pits).unwrap() }
}

fn desk_training() -> Check {
    let start = Instant::now();
    let (h, _) = generate(&GeneratorConfig { n_runners: 2000, seed: 0, ..Default::default() }).unwrap();
    let base = prepare(h, &SplitRatios::default(), 0, &BinningConfig::default(), &GrammarConfig::default(), layout(12, Ablation::None, 0))
        .unwrap();
    let naive = point_metrics(&naive_records(&base, Split::Test).unwrap()).unwrap().median.mae;
    let seeds = [1u64, 2, 3];
    let (mut wins_a, mut wins_b, mut wins_c) = (0, 0, 0);
    let mut lines = Vec::new();
    for &seed in &seeds {
        let full_p = base.relayout(layout(12, Ablation::None, seed)).unwrap();
        let full = desk_run(&full_p, seed, &SmoothingConfig::default());
        let hard = desk_run(&full_p, seed, &SmoothingConfig::Hard);
        let shuffle = desk_run(&base.relayout(layout(12, Ablation::ShuffleEvents, seed)).unwrap(), seed, &SmoothingConfig::default());
        let drop = desk_run(&base.relayout(layout(12, Ablation::DropTimeTokens, seed)).unwrap(), seed, &SmoothingConfig::default());
        wins_a += usize::from(full.median_mae <= 0.85 * naive);
        wins_b += usize::from(full.median_mae <= shuffle.median_mae && full.median_mae <= drop.median_mae);
        wins_c += usize::from(full.best_ks <= hard.best_ks);
        lines.push(format!(
            "seed {seed}: full {:.2}, shuffle {:.2}, drop {:.2}, KS adaptive {:.4} vs hard {:.4}",
            full.median_mae, shuffle.median_mae, drop.median_mae, full.best_ks, hard.best_ks
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    for l in &lines {
        println!("    {l}");
    }
    let majority = seeds.len() / 2 + 1;
    let summary = format!(
        "naive {naive:.2}; (a) {wins_a}/3, (b) {wins_b}/3, (c) {wins_c}/3 seeds; {:.1} min",
        secs / 60.0
    );
    ensure(wins_a >= majority && wins_b >= majority && wins_c >= majority, summary.clone())?;
    ensure(secs < 1800.0, format!("took {:.1} min", secs / 60.0))?;
    Ok(summary)
}

fn metrics_csv(p: &Prepared) -> String {
    let cfg = model_config("tiny", p, InputEmbedding::Discrete).unwrap();
    let tc = TrainConfig { max_steps: 60, eval_interval: 20, seed: 9, ..TrainConfig::desk() };
    let out = train_prepared::<f32>(p, &cfg, &tc, &SmoothingConfig::default()).unwrap();
    let mut t = metrics_table("metrics", &["selection", "step"]);
    for snap in [&out.best_median_mae, &out.best_ks] {
        let records: Vec<EvalRecord> = model_records(&snap.params, &cfg, p, Split::Validation).unwrap();
        let pits: Vec<f64> = records.iter().map(|r| r.pit).collect();
        let cells = metric_cells(records.len(), ks_statistic(&pits).unwrap(), &point_metrics(&records).unwrap());
        t.push([vec!["snapshot".into(), snap.step.to_string()], cells].concat());
    }
    t.to_csv()
}

fn determinism() -> Check {
    let a = metrics_csv(&small_prepared(300, 12, 9));
    let b = metrics_csv(&small_prepared(300, 12, 9));
    ensure(a == b, "metrics tables differ")?;
    Ok(format!("{} identical bytes", a.len()))
}

fn binning() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..200 {
        let n = rng.random_range(1..2000);
        let mut set = std::collections::BTreeSet::new();
        while set.len() < n {
            set.insert(rng.random_range(-1_000_000i64..1_000_000));
        }
        let values: Vec<f64> = set.iter().map(|&v| v as f64 / 100.0).collect();
        let k = rng.random_range(1..=n.min(100));
        let spec = fit_balanced("x", &values, k, 1e12).map_err(|e| e.to_string())?;
        let mut counts = vec![0usize; spec.len()];
        for &v in &values {
            let i = spec.edges.partition_point(|&e| e <= v) - 1;
            counts[i.min(spec.len() - 1)] += 1;
        }
        let ideal = n as f64 / k as f64;
        ensure(spec.len() == k, format!("case {case}: {} bins for {k}", spec.len()))?;
        ensure(counts.iter().all(|&c| (c as f64 - ideal).abs() <= 1.0), format!("case {case}: counts {counts:?}"))?;
    }
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let n = rng.random_range(1..500);
        let spread = rng.random_range(1.0..1000.0);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0f64).powi(3) * spread).collect();
        let cap = rng.random_range(0.01..spread);
        let spec = fit_balanced("x", &values, rng.random_range(1..40), cap).map_err(|e| e.to_string())?;
        let widest = spec.edges.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        ensure(widest <= cap, format!("case {case}: width {widest} over cap {cap}"))?;
        worst = worst.max(widest / cap);
    }
    let ids: Vec<String> = (0..10_000).map(|i| format!("r{i:06}")).collect();
    let ratios = SplitRatios::default();
    let splits = pacetok::grammar::split_entities(&ids, &ratios, 0).unwrap();
    let share = |s: Split| splits.iter().filter(|&&x| x == s).count() as f64 / ids.len() as f64;
    let got = [share(Split::Train), share(Split::Validation), share(Split::Test)];
    let want = [ratios.train, ratios.validation, ratios.test];
    ensure(got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 0.01), format!("split shares {got:?}"))?;
    Ok(format!(
        "200 balanced fits within one; 1000 capped fits, widest/cap {worst:.3}; split shares {:.4}/{:.4}/{:.4}",
        got[0], got[1], got[2]
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("soft-target correctness", soft_targets),
        ("adaptive sigma", adaptive),
        ("gradient fidelity", gradients),
        ("causality and PAD invariance", causality),
        ("calibration oracle", calibration_oracle),
        ("KS unit values", ks_units),
        ("Riegel", riegel),
        ("desk-scale training", desk_training),
        ("determinism", determinism),
        ("binning and splits", binning),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let number = i + 1;
        if !selected.is_empty() && !selected.contains(&number) {
            continue;
        }
        let outcome = panic::catch_unwind(check).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or(e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("criterion {number:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {number:>2} FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
