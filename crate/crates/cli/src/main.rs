//! `reseg` command-line entry point.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use run_config::Balance;

/// Semantic segmentation with recurrent ReNet layers.
#[derive(Parser, Debug)]
#[command(name = "reseg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic segmentation dataset.
    Synth(SynthArgs),
    /// Train a model from a JSON run config.
    Train(TrainArgs),
    /// Evaluate a model on one split of a dataset.
    Eval(EvalArgs),
    /// Predict the label map of one image.
    Predict(PredictArgs),
    /// Compare tape gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(clap::Args, Debug)]
pub struct SynthArgs {
    /// Number of images.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    /// Image side length in pixels (multiple of 4).
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Class count including background (2 to 5).
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    /// Run config (JSON).
    pub config: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub balance: Option<Balance>,
    /// Continue from `last.model` in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Directory for `metrics.csv` and `metrics.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input PPM or PGM image.
    #[arg(long)]
    pub image: PathBuf,
    /// Output PGM whose gray levels are class indices.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one probability PGM per class next to `--out`.
    #[arg(long)]
    pub probs: bool,
}

#[derive(clap::Args, Debug)]
pub struct GradcheckArgs {
    /// Run config or model config; defaults to the tiny profile.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Freeze the convolutional stem (a 3×3 stem is added if the model has none).
    #[arg(long)]
    pub frozen_frontend: bool,
    /// Images in the checked batch.
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Failure with its exit code: 1 runtime, 2 usage or configuration.
pub enum Failure {
    Runtime(anyhow::Error),
    Usage(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e = e.into();
        match e.downcast_ref::<reseg::Error>() {
            Some(reseg::Error::Config(_)) => Failure::Usage(e),
            _ => Failure::Runtime(e),
        }
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn init_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("RESEG_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| usage(anyhow::anyhow!("RESEG_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(usage(anyhow::anyhow!("RESEG_THREADS must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    });
    match result {
        Ok(code) => code,
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
