//! `dyntta`: dataset generation, training, evaluation, ablations, pruning
//! sweeps, augmentation estimation and a gradient self-test.

mod commands;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dyntta::Error;

/// Exit code for malformed command lines.
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "dyntta", version, about = "Differentiable test-time augmentation toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "DYNTTA_THREADS")]
    pub threads: Option<usize>,
    /// Training settings as `key = value` lines (train-dyntta, ablate).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replace a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
}

/// Test-split subset and corruption grid shared by the evaluating commands.
#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    /// `unseen`, `seen`, `all`, or a comma-separated list of corruption names.
    #[arg(long, default_value = "unseen")]
    pub kinds: String,
    /// A severity, a range `1-5`, or a comma-separated list.
    #[arg(long, default_value = "5")]
    pub severities: String,
    /// Use only the first N test images.
    #[arg(long)]
    pub test_limit: Option<usize>,
    /// Images sharing one pruning plan.
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render the synthetic shape dataset to PNG folders.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n_train: usize,
        #[arg(long, default_value_t = 500)]
        n_test: usize,
    },
    /// Train the classifier that the enhancement model is trained against.
    TrainClassifier {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// `none`, `mix`, an op-set name (`normal`, `all`, `estimated`) or a
        /// comma-separated op list added to the base ops.
        #[arg(long, default_value = "none")]
        augmentation: String,
        #[arg(long)]
        train_limit: Option<usize>,
    },
    /// Train the enhancement model against a frozen classifier.
    TrainDyntta {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        train_limit: Option<usize>,
    },
    /// Accuracy on clean data and a corruption grid, with deltas to the
    /// no-enhancement baseline.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        /// Enhancement checkpoint; omit for the baseline.
        #[arg(long)]
        dyntta: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Paired ablation runs: `leave-one-out`, `modes` or `range-scale`.
    Ablate {
        #[arg(long)]
        suite: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds shared by every variant.
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
        #[arg(long)]
        train_limit: Option<usize>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Accuracy and executed augmentations across pruning thresholds.
    PruneSweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        dyntta: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "0,0.005,0.01,0.02,0.05,0.1,0.2")]
        thresholds: String,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Blend-weight statistics on a corrupted validation split and the
    /// training-time ops they suggest.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dyntta: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Corruptions (severity 5) forming the validation split.
        #[arg(long, default_value = "unseen")]
        kinds: String,
        #[arg(long, default_value_t = 4)]
        top_n: usize,
    },
    /// Retrain classifiers with the normal, full and estimated mix op sets.
    RetrainEstimated {
        #[arg(long)]
        data: PathBuf,
        /// `estimated.txt` written by `estimate`.
        #[arg(long)]
        estimated: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long)]
        train_limit: Option<usize>,
        #[arg(long)]
        test_limit: Option<usize>,
    },
    /// Finite-difference check of every primitive, augmentation and the
    /// full pipeline.
    GradCheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Only checks whose name contains this text.
        #[arg(long)]
        filter: Option<String>,
        /// Also write `grad_check.csv` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
