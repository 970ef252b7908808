//! `deepstpp` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 simulation
//! failure, 4 diverged fit, 5 I/O failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "deepstpp", version, about = "Deep-kernel spatio-temporal point processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Allow replacing existing output files.
    #[arg(long, global = true)]
    overwrite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate an event corpus.
    Simulate,
    /// Fit a deep-kernel model to a corpus.
    Fit,
    /// Forecast the final event of every corpus sequence.
    Predict,
    /// Effective ranks of the two kernel parameterizations.
    RankDemo,
    /// Fit a graph point process.
    GraphFit,
    /// Write influence snapshots of a graph model.
    GraphSnapshots,
    /// Fit the discrete-time Bernoulli model to a binary panel.
    DiscreteFit,
    /// Held-out metrics of a checkpoint on a corpus.
    Evaluate,
    /// Export a kernel or intensity grid in long format.
    Export,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = commands::Context { config_path: cli.config, seed: cli.seed, out: cli.out, overwrite: cli.overwrite };
    match commands::run(cli.command, &ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.kind.code())
        }
    }
}
