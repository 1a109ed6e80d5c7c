//! `morphnas` command-line driver.

mod action;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{DataArgs, SearchArgs};
use morphnas_core::Error;

#[derive(Parser, Debug)]
#[command(name = "morphnas", version, about = "Architecture search by function-preserving network growth")]
struct Cli {
    /// Output root for runs and generated files
    #[arg(long, global = true, env = "MORPHNAS_OUT", default_value = "runs")]
    out: PathBuf,
    /// More logging (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an architecture search into a new run directory
    Search {
        /// JSON config with optional `data` and `search` sections
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory name under the output root
        #[arg(long)]
        name: Option<String>,
        /// Reuse a run directory that already holds a manifest
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Apply one morphism to a checkpoint
    Morph {
        checkpoint: PathBuf,
        /// wider:<layer> (layers count from 1) or deeper:<fc|conv|rnn>@<position>
        action: String,
        /// Check the morphed network computes the same function
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = morphnas_core::tensor::PRESERVATION_TOL)]
        tolerance: morphnas_core::tensor::Real,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output checkpoint (default: <out>/morphed.json)
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Train a fixed architecture
    Train {
        /// Layer tokens, e.g. "rnn-4,fc-16"
        #[arg(long, required_unless_present = "init")]
        arch: Option<String>,
        /// Continue from a checkpoint instead of a fresh network
        #[arg(long, conflicts_with = "arch")]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: morphnas_core::tensor::Real,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output checkpoint (default: <out>/model.json)
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Print RMSE and MAE of a checkpoint on one split
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value = "test", value_parser = ["train", "validation", "test"])]
        split: String,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Write a synthetic series as CSV
    Datagen {
        #[arg(long, default_value = "load", value_parser = |s: &str| s.parse::<morphnas_core::data::DataKind>().map_err(|e| e.to_string()))]
        kind: morphnas_core::data::DataKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2160)]
        length: usize,
        /// Output CSV (default: <out>/<kind>-seed<seed>.csv)
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// List the networks of a pool snapshot
    Pool {
        /// Snapshot directory (a run's `pool/`)
        dir: PathBuf,
        /// Print JSON lines instead of a table
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
    /// Morph verification exceeded the tolerance.
    Verify(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn code_and_kind(&self) -> (u8, &'static str) {
        match self {
            CliError::Usage(_) => (1, "usage"),
            CliError::Verify(_) => (3, "numeric"),
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) | Error::Token(_) | Error::Masking { .. } => (1, "usage"),
                Error::NonFinite(_) | Error::Diverged(_) | Error::NotScalar(_) => (3, "numeric"),
                _ => (2, "data"),
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Verify(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

/// Keeps freed batch buffers in the heap instead of returning them to the
/// kernel after every training step.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn keep_heap() {
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn keep_heap() {}

fn main() -> ExitCode {
    keep_heap();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    match commands::run(&cli.out, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = e.code_and_kind();
            let line = serde_json::json!({ "error": kind, "code": code, "message": e.message() });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
