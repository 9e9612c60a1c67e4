//! `gdformer` command-line runner.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gdformer::scoring::Calibration;

use commands::Artifacts;
use config::{resolve, Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config keys or values. Exit code 1.
    #[error("{0}")]
    Config(String),
    /// Anything that fails after the configuration was accepted. Exit code 2.
    #[error("{0}")]
    Runtime(String),
}

#[derive(Parser, Debug)]
#[command(name = "gdformer", version, about = "Dictionary-attention transformer for time-series anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base settings: msl, smap, swat, psm or synth.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Percentage of points flagged as anomalous.
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Threshold population: test or combined.
    #[arg(long, global = true)]
    calibration: Option<Calibration>,
    /// Attention mechanism: dictionary or self.
    #[arg(long, global = true)]
    attention: Option<String>,
    /// Detection criterion: sim, sim-series or recon.
    #[arg(long, global = true)]
    criterion: Option<String>,
    /// Similarity metric: dot, kl or js.
    #[arg(long, global = true)]
    metric: Option<String>,
    /// 1-based similarity layers, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// Checkpoint to score, or the transfer source.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Training series CSV (rows are timesteps).
    #[arg(long, global = true)]
    train_data: Option<PathBuf>,
    /// Test series CSV.
    #[arg(long, global = true)]
    test_data: Option<PathBuf>,
    /// One 0/1 label per test row.
    #[arg(long, global = true)]
    test_labels: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Write a synthetic train/test pair with labels.
    Synth,
    /// Train a model and save a checkpoint and loss log.
    Train,
    /// Score a series with a checkpoint.
    Detect,
    /// Score a labeled series and report precision, recall and F1.
    Evaluate,
    /// Train with the dictionary and prototypes of another checkpoint frozen.
    Transfer,
    /// Run the ablation grid.
    Ablate,
    /// Time dictionary against self attention across window lengths.
    Bench,
    /// Finite-difference check of the full model's gradients.
    Gradcheck,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            preset: self.preset.clone(),
            delta: self.delta,
            lambda: self.lambda,
            epochs: self.epochs,
            calibration: self.calibration,
            attention: self.attention.clone(),
            criterion: self.criterion.clone(),
            metric: self.metric.clone(),
            layers: self.layers.clone(),
            checkpoint: self.checkpoint.clone(),
            train_data: self.train_data.clone(),
            test_data: self.test_data.clone(),
            test_labels: self.test_labels.clone(),
        }
    }
}

fn run(command: Command, cfg: &RunConfig) -> Result<(), CliError> {
    let mut art = Artifacts::open(&cfg.out)?;
    let result = match command {
        Command::Synth => commands::synth(cfg, &mut art),
        Command::Train => commands::train(cfg, &mut art),
        Command::Detect => commands::detect(cfg, &mut art),
        Command::Evaluate => commands::evaluate_cmd(cfg, &mut art),
        Command::Transfer => commands::transfer(cfg, &mut art),
        Command::Ablate => commands::ablate(cfg, &mut art),
        Command::Bench => commands::bench(cfg, &mut art),
        Command::Gradcheck => commands::gradcheck(cfg, &mut art),
    };
    if result.is_err() {
        art.discard();
    }
    result
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
    let outcome = resolve(cli.config.as_deref(), &cli.overrides())
        .and_then(|cfg| cfg.validate().map(|_| cfg))
        .and_then(|cfg| run(cli.command, &cfg));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Config(_) => 1,
                CliError::Runtime(_) => 2,
            })
        }
    }
}
