//! `scatnet`: scattering features, affine-model training and evaluation
//! from the command line. Every artifact lands in `out_dir` as a binary
//! container or a CSV table.

mod commands;
mod config;
mod output;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{RunConfig, DATA_ENV};

#[derive(Debug, Parser)]
#[command(name = "scatnet", version, about = "Scattering transform classification toolkit")]
#[command(after_long_help = RunConfig::help_text())]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Root for relative dataset paths (also read from SCATNET_DATA).
    #[arg(long, global = true, value_name = "DIR")]
    data_root: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0: one per CPU).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write one feature container per split of `dataset`.
    Scatter,
    /// Fit one affine model per class and write `models.scat`.
    Train,
    /// Cross-validate the scale and penalty grids; writes `cv.csv`.
    Cv,
    /// Classify the test split; writes `eval.csv`, `confusion.csv`, `predictions.csv`.
    Eval,
    /// In/Out approximation curves of trained models; writes `curves.csv`.
    Curves,
    /// Error versus training size on MNIST; writes `mnist.csv`.
    ReproduceMnist,
    /// Full USPS protocol; writes `usps.csv`.
    ReproduceUsps,
    /// CUReT texture protocol; writes `curet.csv`.
    ReproduceCuret,
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(root) = std::env::var_os(DATA_ENV) {
        cfg.data_root = root.into();
    }
    for assignment in &cli.overrides {
        cfg.apply_assignment(assignment).context("in --set")?;
    }
    if let Some(root) = &cli.data_root {
        cfg.data_root = root.clone();
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = build_config(&cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("cannot configure worker threads")?;
    }
    match cli.command {
        Command::Scatter => commands::scatter(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Cv => commands::cv(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Curves => commands::curves(&cfg),
        Command::ReproduceMnist => commands::reproduce_mnist(&cfg),
        Command::ReproduceUsps => commands::reproduce_usps(&cfg),
        Command::ReproduceCuret => commands::reproduce_curet(&cfg),
    }
}
