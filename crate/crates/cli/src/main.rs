//! `magguard` command-line front end: dataset synthesis, corrector training,
//! streaming inference, evaluation and throughput measurement.

mod bench;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "magguard", version, about = "Magnetic-disturbance-aware orientation pipeline for six body-worn IMUs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (environments, raws, ground truth, labels).
    Synth(SynthArgs),
    /// Train the yaw corrector on a synthetic dataset.
    Train(TrainArgs),
    /// Run the pipeline on a raw-frame file or stdin.
    Run(RunArgs),
    /// Compare pipeline output against ground truth.
    Eval(EvalArgs),
    /// Measure stage-1 and corrector throughput.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Magnets per room.
    #[arg(long)]
    pub magnets: Option<usize>,
    /// Total minutes of motion, split into sequences.
    #[arg(long, default_value_t = 10.0)]
    pub minutes: f64,
    /// magnetic | naive
    #[arg(long)]
    pub mode: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Length of each procedural sequence, s.
    #[arg(long, default_value_t = 120.0)]
    pub seq_seconds: f64,
    /// Dataset config (TOML); command-line flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use these trajectory files instead of procedural motion.
    #[arg(long = "trajectory")]
    pub trajectories: Vec<PathBuf>,
    /// Fraction of sequences held out for validation.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Skeleton TOML; default is the built-in skeleton.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out_weights: PathBuf,
    /// Training log (JSON lines); default is `<out-weights>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Training config (TOML); command-line flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Validate on another dataset's sequences instead of the held-out split.
    #[arg(long)]
    pub val_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Raw-frame file, or `-` for stdin.
    #[arg(long)]
    pub input: String,
    /// Corrector weights; without them only stage 1 runs.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Pipeline config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file (JSON lines), or `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Pipeline output files; paired in order with `--gt`.
    #[arg(long, required = true)]
    pub pred: Vec<PathBuf>,
    /// Ground-truth dataset sequence files (`seq_NNNN.jsonl`).
    #[arg(long, required = true)]
    pub gt: Vec<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Emit the report as JSON.
    #[arg(long)]
    pub json: bool,
    /// Leading seconds of each sequence left out.
    #[arg(long, default_value_t = 0.0)]
    pub skip_seconds: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Raw-frame file; default is a synthetic clean-room recording.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Corrector weights; default is a freshly initialized full-size network.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Length of the synthetic recording, s.
    #[arg(long, default_value_t = 60.0)]
    pub seconds: f64,
    /// Emit JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("MAGSHIELD_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("MAGSHIELD_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Run(a) => commands::run(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => bench::bench(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("magguard: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
