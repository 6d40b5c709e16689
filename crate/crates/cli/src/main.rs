//! `arzctl`: benchmark harness for ARZ traffic boundary control.
//!
//! Subcommands cover the full experiment pipeline: kernel solving, dataset
//! generation, operator training, closed-loop simulation, the four-controller
//! comparison, and operator-accuracy measurement. All outputs are CSV files,
//! generated matplotlib scripts, and a machine-readable `summary.json`.
//!
//! Exit codes: 0 success, 2 configuration, 3 numerics, 4 model/file I/O.

mod commands;
mod config;
mod plots;
mod summary;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use arz_control::Error;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "arzctl", version, about = "ARZ traffic boundary-control benchmarks")]
struct Cli {
    /// TOML experiment configuration (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the backstepping gain kernels and verify the residuals.
    SolveKernels,
    /// Generate a training dataset from the numerical oracles.
    GenDataset {
        #[arg(long, value_enum)]
        operator: Operator,
    },
    /// Train a DeepONet on a generated dataset.
    Train {
        #[arg(long, value_enum)]
        operator: Operator,
    },
    /// Run a closed-loop simulation with the configured controller.
    Simulate,
    /// Run all four controllers on the same scenario and tabulate
    /// accuracy and timing.
    Compare,
    /// Measure operator approximation error against the numerical oracle.
    MeasureEps {
        #[arg(long, value_enum)]
        operator: Operator,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Operator {
    Kernel,
    Law,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Domain(_) | Error::Shape(_) => 2,
        Error::Numerics(_) => 3,
        Error::ModelIo(_) | Error::Io(_) => 4,
    }
}

fn run(cli: Cli) -> arz_control::Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    std::fs::create_dir_all(&config.out_dir)?;

    match cli.command {
        Command::SolveKernels => commands::solve_kernels(&config),
        Command::GenDataset { operator } => commands::gen_dataset(&config, operator),
        Command::Train { operator } => commands::train(&config, operator),
        Command::Simulate => commands::simulate(&config),
        Command::Compare => commands::compare(&config),
        Command::MeasureEps { operator } => commands::measure_eps(&config, operator),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
