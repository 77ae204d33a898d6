//! `pacetok` pipeline runner.
//!
//! Every subcommand writes into `--out` together with `config.resolved`,
//! `run.txt` and `run.log`. Exit codes: 2 for configuration errors and
//! unknown flags, 3 for data errors, 4 for numerical failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pacetok::grammar::Split;
use pacetok::{Error, ErrorKind, Result};

use commands::{DiagnosticsArgs, EvaluateArgs, Predictor, Run};
use config::Settings;

#[derive(Parser)]
#[command(name = "pacetok", version, about = "Tokenized pace forecasting pipeline")]
struct Cli {
    /// `key=value` config file applied over the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    #[arg(long, global = true, value_parser = ["desk", "paper-doc"])]
    profile: Option<String>,
    #[arg(long, global = true, value_parser = ["none", "drop_time_tokens", "shuffle_events"])]
    ablation: Option<String>,
    /// Checkpoint selection rule.
    #[arg(long, global = true, value_parser = ["best_median_mae", "best_ks"])]
    select: Option<String>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its ground-truth sidecar.
    GenData,
    /// Split runners and fit feature bins on the training split.
    FitBins {
        #[arg(long)]
        data: PathBuf,
    },
    /// Build the vocabulary manifest from fitted bins.
    BuildVocab {
        #[arg(long)]
        bins: PathBuf,
    },
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "model")]
        predictor: Predictor,
        #[arg(long, default_value = "validation")]
        split: String,
        /// Ground-truth sidecar for the oracle predictor.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Train once per smoothing setting and rank by KS.
    SweepSigma {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Train the full model and both ablations over several seeds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Regenerate tables and plots from a run's stored examples.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    DumpDiagnostics {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "validation")]
        split: String,
        #[arg(long)]
        runner: Option<String>,
        #[arg(long)]
        target: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::FitBins { .. } => "fit-bins",
            Command::BuildVocab { .. } => "build-vocab",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::SweepSigma { .. } => "sweep-sigma",
            Command::Ablate { .. } => "ablate",
            Command::Report { .. } => "report",
            Command::DumpDiagnostics { .. } => "dump-diagnostics",
        }
    }
}

fn settings(cli: &Cli) -> Result<Settings> {
    let mut flags: Vec<(String, String)> = Vec::new();
    if let Some(s) = cli.seed {
        flags.push(("seed".into(), s.to_string()));
    }
    if let Some(a) = &cli.ablation {
        flags.push(("window.ablation".into(), a.clone()));
    }
    if let Some(s) = &cli.select {
        flags.push(("train.select".into(), s.clone()));
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        flags.push((k.trim().into(), v.trim().into()));
    }
    let flags: Vec<(&str, String)> = flags.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    Settings::resolve(cli.profile.as_deref(), cli.config.as_deref(), &|k| std::env::var(k).ok(), &flags)
}

fn run(cli: Cli) -> Result<()> {
    let settings = settings(&cli)?;
    let mut r = Run::new(settings, cli.out.clone(), cli.command.name())?;
    match &cli.command {
        Command::GenData => commands::gen_data(&mut r)?,
        Command::FitBins { data } => commands::fit_bins_cmd(&mut r, data)?,
        Command::BuildVocab { bins } => commands::build_vocab(&mut r, bins)?,
        Command::Train { data, vocab } => {
            let res = commands::train_cmd(&mut r, data, vocab.as_deref());
            if res.is_err() {
                r.finish()?;
                return res;
            }
        }
        Command::Evaluate { data, vocab, checkpoint, predictor, split, truth } => commands::evaluate(
            &mut r,
            EvaluateArgs {
                data,
                vocab: vocab.as_deref(),
                checkpoint: checkpoint.as_deref(),
                truth: truth.as_deref(),
                predictor: *predictor,
                split: Split::parse(split)?,
            },
        )?,
        Command::SweepSigma { data, vocab } => commands::sweep_sigma(&mut r, data, vocab.as_deref())?,
        Command::Ablate { data, vocab } => commands::ablate(&mut r, data, vocab.as_deref())?,
        Command::Report { run } => commands::report(&mut r, run)?,
        Command::DumpDiagnostics { data, vocab, checkpoint, split, runner, target } => commands::diagnostics(
            &mut r,
            DiagnosticsArgs {
                data,
                vocab: vocab.as_deref(),
                checkpoint,
                split: Split::parse(split)?,
                runner: runner.as_deref(),
                target: *target,
            },
        )?,
    }
    r.finish()
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
