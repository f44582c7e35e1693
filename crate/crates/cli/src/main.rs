//! `drivecal` — car-following calibration pipeline.
//!
//! One declarative TOML config drives every subcommand; artifacts land in
//! the configured output directory together with a manifest of checksums.

mod config;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "drivecal",
    version,
    about = "Calibrate car-following models against recorded trajectories",
    long_about = "Calibrate car-following models against recorded trajectories.\n\
                  The usual order is: ingest (or synth), pairs, score, label,\n\
                  calibrate-fixed, train, evaluate, report. Every subcommand reads\n\
                  the same config file and writes into its output_dir."
)]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, value_name = "PATH", default_value = "drivecal.toml")]
    config: PathBuf,

    /// Override one config entry, e.g. --set windows.window_len=10
    /// (repeatable; values are parsed as TOML).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Worker threads for stage-internal parallelism. Only changes speed,
    /// never outputs.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the raw trajectory CSV into the canonical store.
    Ingest,
    /// List leader/follower pairs with enough overlapping frames.
    Pairs,
    /// Score driving styles and bucket them into three clusters.
    Score,
    /// Label every time window with its best-fit model parameters.
    Label,
    /// Fit one constant parameter vector per pair on its training span.
    CalibrateFixed,
    /// Train the pooled window-to-parameters predictor.
    Train,
    /// Replay one pair under a chosen calibration.
    Simulate,
    /// Compare default, fixed, and adaptive calibration per pair.
    Evaluate,
    /// Aggregate scores and evaluations into plot-ready tables.
    Report,
    /// Generate a synthetic corpus with planted parameters.
    Synth,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = config::load_config(&cli.config, &cli.set)?;
    let stage = stages::Stage::new(&config)?;
    let go = || match cli.command {
        Command::Ingest => stages::ingest(&stage),
        Command::Pairs => stages::pairs(&stage),
        Command::Score => stages::score(&stage),
        Command::Label => stages::label(&stage),
        Command::CalibrateFixed => stages::calibrate_fixed(&stage),
        Command::Train => stages::train(&stage),
        Command::Simulate => stages::simulate(&stage),
        Command::Evaluate => stages::evaluate(&stage),
        Command::Report => stages::report(&stage),
        Command::Synth => stages::synth(&stage),
    };
    match cli.workers {
        None => go(),
        Some(0) => bail!("--workers: need at least 1 thread"),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| anyhow::anyhow!("--workers: {e}"))?
            .install(go),
    }
}
