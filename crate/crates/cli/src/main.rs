//! Command-line front end for the spectral series conditional density
//! estimator: scenario generation, tuning, prediction, evaluation, and
//! benchmark sweeps.

mod cmds;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::ConfigFile;

#[derive(Parser)]
#[command(
    name = "spectral-cde",
    version,
    about = "Spectral series conditional density estimation"
)]
struct Cli {
    /// INI config file with one section per subcommand; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulation scenario and write train/val/test CSVs
    Gen(cmds::gen::GenArgs),
    /// Tune the estimator on train/validation data and save the model
    Fit(cmds::fit::FitArgs),
    /// Evaluate a fitted model's density on a grid for each query row
    Predict(cmds::predict::PredictArgs),
    /// Test-set loss, bootstrap standard error, and PIT/KS calibration
    Evaluate(cmds::evaluate::EvaluateArgs),
    /// Sweep methods over scenario/dimension/seed cells into a CSV
    Bench(cmds::bench::BenchArgs),
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match &cli.command {
        Command::Gen(args) => cmds::gen::run(args, &cfg),
        Command::Fit(args) => cmds::fit::run(args, &cfg),
        Command::Predict(args) => cmds::predict::run(args, &cfg),
        Command::Evaluate(args) => cmds::evaluate::run(args, &cfg),
        Command::Bench(args) => cmds::bench::run(args, &cfg),
    }
}
