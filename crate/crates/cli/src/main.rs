//! `emg-open`: synthesise datasets, train extractors, run the open-set
//! evaluation protocol and benchmark the metric.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emg_open_core::Method;

#[derive(Parser, Debug)]
#[command(name = "emg-open", version, about = "Open-set EMG motion recognition with SLED prototypes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train an extractor on the target motions of a dataset.
    Train(TrainArgs),
    /// Run the k-fold open-set protocol and write report files.
    Eval(EvalArgs),
    /// ROC of a trained model: target-motion windows against novel-motion windows.
    Roc(RocArgs),
    /// AUC for each prototype-loss weight in a grid.
    SweepLambda(SweepArgs),
    /// Time closed-form SLED against eigendecomposition LED.
    BenchMetric(BenchArgs),
    /// Classify every window of a dataset with a trained model.
    Detect(DetectArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u32).range(2..))]
    targets: u32,
    #[arg(long, default_value_t = 8)]
    novels: u32,
    #[arg(long, default_value_t = 15, value_parser = clap::value_parser!(u32).range(5..))]
    reps: u32,
    #[arg(long, default_value_t = 2.0)]
    trial_seconds: f64,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u32).range(1..))]
    sampling_rate: u32,
    #[arg(long, default_value_t = 0.05)]
    noise_floor: f64,
}

/// CPN training options shared by `train`, `eval` and `sweep-lambda`.
#[derive(Args, Debug, Clone)]
struct TrainOpts {
    /// Prototype-loss weight (default 1.0 for SLED, 0.5 for ED).
    #[arg(long)]
    lambda_loss: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Distance power inside the softmax: 1 uses D, 2 uses D squared.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    ce_distance_power: Option<u8>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// cpn-sled, cpn-ed, lda-sled, lda-ed or lda-md.
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainOpts,
}

#[derive(Args, Debug, Clone)]
struct ProtocolOpts {
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(2..))]
    folds: u32,
    #[arg(long, default_value_t = 0.9)]
    tpr: f64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// cpn-sled, cpn-ed, lda-sled, lda-ed or lda-md.
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[arg(long, default_value = "eval_out")]
    out_dir: PathBuf,
    /// Skip roc.svg.
    #[arg(long)]
    no_svg: bool,
    #[command(flatten)]
    protocol: ProtocolOpts,
    #[command(flatten)]
    train: TrainOpts,
}

#[derive(Args, Debug)]
struct RocArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "roc_out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_method, default_value = "cpn-sled")]
    method: Method,
    #[arg(long, default_value = "0,0.25,0.5,0.75,1.0", value_parser = parse_grid)]
    // fully qualified so clap parses one comma-separated value instead of repeats
    grid: std::vec::Vec<f64>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    protocol: ProtocolOpts,
    #[command(flatten)]
    train: TrainOpts,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value = "8,32,128,256", value_parser = parse_dims)]
    dims: std::vec::Vec<usize>,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    reps: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Fixed rejection threshold on the nearest-prototype distance.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "calibrate_tpr", required_unless_present = "calibrate_tpr")]
    threshold: Option<f64>,
    /// Calibrate the threshold on the dataset's target-motion windows.
    #[arg(long)]
    calibrate_tpr: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|_| {
        let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let vals = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    match vals.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        Some(v) => Err(format!("lambda must be finite and non-negative, got {v}")),
        None => Ok(vals),
    }
}

fn parse_dims(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|t| match t.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(format!("not a positive integer: {t:?}")),
        })
        .collect()
}

/// Failure classes mapped onto exit codes.
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<emg_open_core::Error> for Failure {
    fn from(e: emg_open_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("EMG_OPEN_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("EMG_OPEN_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Roc(a) => commands::roc(a),
        Command::SweepLambda(a) => commands::sweep_lambda(a),
        Command::BenchMetric(a) => commands::bench_metric(a),
        Command::Detect(a) => commands::detect(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
