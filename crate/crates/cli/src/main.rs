//! `gazelearn`: synthetic gaze datasets, attention pre-training, transfer
//! evaluation. Progress goes to stderr; machine-readable results go to
//! files in the run directory. Every command with a seed is bit-reproducible.

mod config;
mod eval;
mod finetune;
mod probe;
mod rf;
mod split;
mod synth;
mod train;

use clap::{Args, Parser, Subcommand};
use gazelearn_core::Error;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "gazelearn", version, about = "Learning image representations from gaze")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scan-video dataset with gaze and sparse labels
    Synth(synth::SynthArgs),
    /// Pre-train the dilated attention network on saliency maps or gaze points
    Train(train::TrainArgs),
    /// Score a checkpoint or a static baseline on a dataset
    Eval(eval::EvalArgs),
    /// Fine-tune a checkpoint (or a random init) as a frame classifier
    Finetune(finetune::FinetuneArgs),
    /// Fit linear probes on frozen features at the registered layers
    Probe(probe::ProbeArgs),
    /// Print the receptive-field geometry table for a network config
    Rf(rf::RfArgs),
}

/// Flags every subcommand takes. Flag values override config-file values.
#[derive(Args, Debug)]
struct Common {
    /// Run seed (overrides the config file)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for run artifacts
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON config file, or a built-in config name (mini, se-resnext50-half)
    #[arg(long)]
    config: Option<String>,
    /// Worker threads; results are bit-identical at any thread count
    #[arg(long)]
    threads: Option<usize>,
}

/// Exit codes: 0 success, 2 usage, 3 I/O, 4 numerical abort. Usage covers
/// everything the caller could have asked differently; clap's own parse
/// errors also exit 2.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Manifest { .. } | Error::Checkpoint(_) => 3,
        Error::Json(j) if j.classify() == serde_json::error::Category::Io => 3,
        Error::Numeric { .. } => 4,
        _ => 2,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Synth(a) => synth::run(a),
        Cmd::Train(a) => train::run(a),
        Cmd::Eval(a) => eval::run(a),
        Cmd::Finetune(a) => finetune::run(a),
        Cmd::Probe(a) => probe::run(a),
        Cmd::Rf(a) => rf::run(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
