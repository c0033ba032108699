//! `fcnt`: dataset generation, training, segmentation and evaluation.

mod commands;
mod runlog;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fcnt_core::experiment::ExperimentId;

/// Exit status of a failed run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Failure {
    /// Bad arguments or inputs that fail validation.
    Validation = 2,
    /// Files that cannot be read or written.
    Io = 3,
    /// Non-finite values during training or inference.
    Numerical = 4,
    /// A rerun produced different output checksums.
    Mismatch = 5,
}

/// An error the user can fix by changing the command line.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Output checksums of a rerun differ from its manifest.
#[derive(Debug)]
pub struct Mismatch(pub Vec<String>);

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "outputs differ from the manifest: {}", self.0.join(", "))
    }
}

impl std::error::Error for Mismatch {}

fn classify(err: &anyhow::Error) -> Failure {
    use fcnt_core::Error as E;
    if err.downcast_ref::<Usage>().is_some() {
        return Failure::Validation;
    }
    if err.downcast_ref::<Mismatch>().is_some() {
        return Failure::Mismatch;
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return Failure::Io;
    }
    match err.downcast_ref::<E>() {
        Some(E::Io { .. } | E::Image { .. } | E::Checkpoint { .. } | E::Checksum { .. }) => {
            Failure::Io
        }
        Some(E::Numerical(_)) => Failure::Numerical,
        _ => Failure::Validation,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "fcnt",
    version,
    about = "Fully-convolutional texture segmentation"
)]
pub struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct OutArg {
    /// Output directory [default: $FCNT_OUT/<command>, or fcnt-out/<command>].
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset of single-texture images and mosaics.
    Generate(commands::GenerateArgs),
    /// Convert a directory of class subdirectories into a dataset.
    Ingest(commands::IngestArgs),
    /// Train a network on the images of a dataset.
    Train(commands::TrainArgs),
    /// Segment one image with a trained network.
    Segment(commands::SegmentArgs),
    /// Segment one image without labels: pre-segment, fine-tune, refine.
    Unsup(commands::UnsupArgs),
    /// Score a directory of predictions against ground truth.
    Eval(commands::EvalArgs),
    /// Run a pinned experiment end to end.
    Run(commands::RunArgs),
    /// Re-execute a run manifest and compare output checksums.
    Rerun(commands::RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Ingest(_) => "ingest",
            Command::Train(_) => "train",
            Command::Segment(_) => "segment",
            Command::Unsup(_) => "unsup",
            Command::Eval(_) => "eval",
            Command::Run(_) => "run",
            Command::Rerun(_) => "rerun",
        }
    }
}

pub fn parse_experiment(s: &str) -> Result<ExperimentId, String> {
    s.parse().map_err(|e: fcnt_core::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::dispatch(cli.command, std::env::args().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e) as u8)
        }
    }
}
