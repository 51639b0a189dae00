//! `lshr`: batch front end for dataset preparation, training, evaluation,
//! pattern export, acquisition simulation and reconstruction.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lshr_core::sensing::PatternMode;
use lshr_core::training::Precision;
use lshr_core::LshrError;

use crate::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "lshr", version, about = "Low-resolution sensing, high-resolution reconstruction")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for initialization, batching and simulation noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Measurement ratio R.
    #[arg(long, global = true)]
    ratio: Option<f64>,
    /// Pattern mode: learned or static.
    #[arg(long, global = true)]
    mode: Option<PatternMode>,
    /// Number of recursive residual blocks.
    #[arg(long, global = true)]
    blocks: Option<usize>,
    /// Training arithmetic: single or double.
    #[arg(long, global = true)]
    precision: Option<Precision>,
    /// Fixes the seed to the configured one instead of drawing a fresh
    /// seed when none is given.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Run directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Crop and augment a directory of images into a patch archive.
    PrepareData,
    /// Train a model and write its checkpoint and history.
    Train,
    /// PSNR of a trained model and of the bicubic baseline on the test set.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluation on DCT-sparsified scenes at each configured keep fraction.
    SparsifyEval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write the binary patterns of a checkpoint as a DMD pattern file.
    ExportPatterns {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Simulate single-pixel acquisitions of an image.
    Simulate {
        #[arg(long)]
        patterns: Option<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 1)]
        frames: u64,
        /// The image is already at sensing resolution.
        #[arg(long)]
        sensing_resolution: bool,
    },
    /// Reconstruct an image from a measurement file.
    Reconstruct {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        measurements: PathBuf,
        /// Ground-truth image for a PSNR line in the report.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Calibration gain and offset, replacing the sidecar's.
        #[arg(long, num_args = 2, value_names = ["GAIN", "OFFSET"])]
        calibration: Option<Vec<f64>>,
    },
    /// Operation counts of the reconstruction layer.
    Complexity {
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
    },
    /// Train and time one model per configured block count.
    SweepBlocks,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::PrepareData => "prepare-data",
            Command::Train => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::SparsifyEval { .. } => "sparsify-eval",
            Command::ExportPatterns { .. } => "export-patterns",
            Command::Simulate { .. } => "simulate",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Complexity { .. } => "complexity",
            Command::SweepBlocks => "sweep-blocks",
        }
    }
}

/// Error category and exit code.
fn category(err: &anyhow::Error) -> (&'static str, u8) {
    match err.downcast_ref::<LshrError>() {
        Some(LshrError::Config(_) | LshrError::Usage(_)) => ("config", 2),
        Some(LshrError::Io { .. } | LshrError::Image { .. }) => ("io", 3),
        Some(LshrError::Format(_) | LshrError::Corrupt(_)) => ("format", 4),
        Some(LshrError::IncompleteFrame { .. } | LshrError::DuplicateEntry { .. } | LshrError::Validation(_)) => ("data", 5),
        Some(LshrError::Dimension(_) | LshrError::Tensor(_)) => ("shape", 6),
        Some(LshrError::NonFinite { .. }) => ("numeric", 7),
        None => ("internal", 1),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = cli.global;
    let overrides = Overrides {
        seed: g.seed,
        ratio: g.ratio,
        mode: g.mode,
        blocks: g.blocks,
        precision: g.precision,
        deterministic: g.deterministic,
        output_dir: g.out,
    };
    let config = RunConfig::load(g.config.as_deref())?.resolve(&overrides)?;
    std::fs::create_dir_all(&config.output_dir).map_err(|e| LshrError::io(&config.output_dir, e))?;
    let resolved = config.output_dir.join(format!("config.{}.toml", cli.command.name()));
    lshr_core::io::write_atomic(&resolved, config.to_toml().as_bytes())?;
    log::info!("resolved configuration written to {}", resolved.display());
    commands::dispatch(&config, cli.command)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, code) = category(&err);
            eprintln!("error[{kind}]: {err:#}");
            ExitCode::from(code)
        }
    }
}
