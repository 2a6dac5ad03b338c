//! Command-line driver: each subcommand reads a flat config file, runs the
//! matching training or evaluation routine from the core library, and leaves
//! a self-describing run directory behind (config snapshot, checkpoints,
//! CSV tables, SVG figures, and a manifest hashing all of it).
//!
//! Reproducibility contract: re-running the command named in a run's
//! manifest, against the run's own config snapshot and recorded seed, yields
//! byte-identical CSV artifacts.

mod artifacts;
mod commands;
mod recipes;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use wavectl_core::Result;

#[derive(Debug, Parser)]
#[command(
    name = "wavectl",
    version,
    about = "Disturbance-rejection learning toolkit for a planar underwater vehicle"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a station-keeping policy (disturbance-aware or baseline).
    TrainGcp(CommonArgs),
    /// Train the recurrent disturbance identifier around a trained policy.
    TrainOdi(CommonArgs),
    /// Fit an empirical dynamics model from randomized motion logs.
    TrainDynamics(CommonArgs),
    /// Adapt a frozen policy stack to a target model with a compensator.
    Transfer(CommonArgs),
    /// Run a controller over seeded episodes and tabulate the metrics.
    Evaluate(CommonArgs),
    /// Roll out one episode and write its motion log.
    Rollout(CommonArgs),
    /// Re-render the figures of an existing run directory.
    Report(ReportArgs),
}

/// Arguments shared by every config-driven subcommand.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat `[section] key = value` config file describing the run.
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the config's `[run] seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory; overrides the config's `[run] out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Existing run directory whose CSV tables to re-render.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::TrainGcp(args) => commands::train_gcp(args),
        Command::TrainOdi(args) => commands::train_odi(args),
        Command::TrainDynamics(args) => commands::train_dynamics(args),
        Command::Transfer(args) => commands::transfer(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Rollout(args) => commands::rollout(args),
        Command::Report(args) => commands::report(args),
    }
}
