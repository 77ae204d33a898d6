use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "synth.n_runners=120",
    "--set",
    "train.max_steps=20",
    "--set",
    "train.eval_interval=10",
];

fn pacetok(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pacetok"))
        .env("RUST_LOG", "warn")
        .arg("--out")
        .arg(out)
        .args(SMALL)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = pacetok(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn data(dir: &Path) -> PathBuf {
    let g = dir.join("gen");
    ok(&g, &["gen-data"]);
    g.join("data.jsonl")
}

fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().skip(1);
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

fn sorted_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn identical_config_and_seed_give_identical_run_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let d = data(tmp.path());
    for name in ["a", "b"] {
        ok(&tmp.path().join(name), &["--seed", "5", "train", "--data", d.to_str().unwrap()]);
    }
    let a = sorted_files(&tmp.path().join("a"));
    let b = sorted_files(&tmp.path().join("b"));
    assert!(a.iter().any(|(n, _)| n == "checkpoint.json"));
    assert_eq!(a.len(), b.len());
    for ((na, ca), (nb, cb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        assert!(ca == cb, "{na} differs between runs");
    }
}

#[test]
fn constant_predictor_collapses_point_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let d = data(tmp.path());
    let ev = tmp.path().join("ev");
    ok(&ev, &["evaluate", "--data", d.to_str().unwrap(), "--predictor", "constant"]);
    let (h, rows) = table(&ev.join("metrics.csv"));
    let col = |name: &str| rows[0][h.iter().position(|c| c == name).unwrap()].parse::<f64>().unwrap();
    assert_eq!(col("mean_mae"), col("median_mae"));
    assert_eq!(col("median_mae"), col("mode_mae"));
    assert_eq!(col("mean_rmse"), col("mode_rmse"));
}

#[test]
fn evaluate_report_and_diagnostics_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = data(tmp.path());
    let d = d.to_str().unwrap();
    let tr = tmp.path().join("train");
    ok(&tr, &["train", "--data", d]);
    let ck = tr.join("checkpoint.json");
    let ev = tmp.path().join("ev");
    ok(&ev, &["evaluate", "--data", d, "--checkpoint", ck.to_str().unwrap()]);
    for f in ["examples.csv", "qq.csv", "occupancy.csv", "strata.csv", "reliability.csv", "qq.svg", "run.txt"] {
        assert!(ev.join(f).exists(), "missing {f}");
    }
    let rep = tmp.path().join("rep");
    ok(&rep, &["report", "--run", ev.to_str().unwrap()]);
    for f in ["qq.csv", "occupancy.csv", "strata.csv", "reliability.csv", "metrics.csv"] {
        assert_eq!(fs::read(ev.join(f)).unwrap(), fs::read(rep.join(f)).unwrap(), "{f}");
    }
    let diag = tmp.path().join("diag");
    ok(&diag, &["dump-diagnostics", "--data", d, "--checkpoint", ck.to_str().unwrap()]);
    let (_, rows) = table(&diag.join("softmax.csv"));
    let total: f64 = rows.iter().map(|r| r[3].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-6);
    assert!(diag.join("attention_l0_h0.svg").exists());
}

#[test]
fn sweep_sigma_writes_ranked_leaderboard() {
    let tmp = tempfile::tempdir().unwrap();
    let d = data(tmp.path());
    let sw = tmp.path().join("sw");
    ok(&sw, &["--set", "sweep.settings=hard,4,adaptive", "sweep-sigma", "--data", d.to_str().unwrap()]);
    let (h, rows) = table(&sw.join("leaderboard.csv"));
    assert_eq!(
        h,
        ["rank", "smoothing", "selection", "step", "n", "ks", "mean_mae", "median_mae", "mode_mae", "mean_rmse", "median_rmse", "mode_rmse"]
    );
    assert_eq!(rows.len(), 3);
    let ks: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert!(ks.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let code = |args: &[&str]| pacetok(&out, args).status.code();
    assert_eq!(code(&["--no-such-flag", "gen-data"]), Some(2));
    assert_eq!(code(&["--set", "train.batch_size=0", "gen-data"]), Some(2));
    assert_eq!(code(&["--set", "nonsense.key=1", "gen-data"]), Some(2));
    assert_eq!(code(&["train", "--data", "/nonexistent/data.jsonl"]), Some(3));
    let d = data(tmp.path());
    assert_eq!(code(&["evaluate", "--data", d.to_str().unwrap()]), Some(2));
    assert_eq!(code(&["evaluate", "--data", d.to_str().unwrap(), "--checkpoint", "/nonexistent.json"]), Some(3));
    assert_eq!(code(&["--set", "train.base_lr=1e30", "train", "--data", d.to_str().unwrap()]), Some(4));
}

#[test]
fn environment_overrides_sit_between_file_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    let o = Command::new(env!("CARGO_BIN_EXE_pacetok"))
        .env("RUST_LOG", "warn")
        .env("PACETOK_SYNTH_N_RUNNERS", "7")
        .args(["--out", out.to_str().unwrap(), "gen-data"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let lines = fs::read_to_string(out.join("data.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 7);
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(resolved.contains("synth.n_runners = 7") || resolved.contains("synth.n_runners=7"));
}
