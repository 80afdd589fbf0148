//! `mgt`: generate synthetic events, train and evaluate models, and export
//! explanations.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or file
//! error, 4 numeric failure.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mgt_core::model::ModelKind;

#[derive(Parser)]
#[command(name = "mgt", version, about = "Mixture-of-experts graph transformer for collision events")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic signal/background dataset as JSONL.
    Gen(GenArgs),
    /// Train one model per seed and write checkpoints, metrics and curves.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset and print metrics as JSON.
    Eval(EvalArgs),
    /// Export attention heatmaps, expert specialization and diagnostics.
    Explain(ExplainArgs),
    /// Retrain with feature groups hidden and rank the AUC drops.
    Ablate(AblateArgs),
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 20_000)]
    pub n_signal: usize,
    /// Split evenly between ttbar and single top.
    #[arg(long, default_value_t = 20_000)]
    pub n_background: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "events.jsonl")]
    pub out: PathBuf,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse()
}

/// Flags that override the config file.
#[derive(Args)]
pub struct TrainOverrides {
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,
    /// Comma-separated, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub w_load: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub batch_size: usize,
}

#[derive(Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// train-all, test-all, test-correct-signal, test-correct-background or test-misclassified.
    #[arg(long, default_value = "test-all")]
    pub subset: String,
    /// Restrict attention maps to events with this many nodes.
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long, default_value = "explain")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub batch_size: usize,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// TOML file with `[[group]]` tables holding `name` and `features`.
    #[arg(long)]
    pub groups_file: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[arg(long, default_value = "ablation")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train_command(a),
        Command::Eval(a) => commands::eval(a),
        Command::Explain(a) => commands::explain(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
