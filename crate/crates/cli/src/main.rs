//! `bdstein`: batch experiments over the bdstein engine.
//!
//! Exit codes: 0 success, 1 bound or assertion violation, 2 configuration error,
//! 3 unmet hypothesis.

// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{Context, Outcome};
use crate::config::{ExperimentConfig, Format};
use crate::error::CliError;
use crate::output::{atomic_write, Sink, OUT_DIR_ENV};

#[derive(Parser)]
#[command(
    name = "bdstein",
    version,
    about = "Stein factors, intertwinings and mixture bounds for birth-death processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment file (TOML); built-in defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides the environment and the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for every random draw; overrides the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads for the grid.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Report encoding; overrides the config.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, Subcommand)]
enum Command {
    /// Intertwining residuals and contraction bounds.
    Verify,
    /// Exact Stein factors with their closed-form bounds.
    Factors,
    /// Closed-form bounds, pointwise lemmas and integral bounds.
    Bounds,
    /// Mixture bounds against exact distances.
    Mixture,
    /// Distances between two configured laws.
    Distance,
    /// Monte Carlo runs.
    Simulate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Factors => "factors",
            Command::Bounds => "bounds",
            Command::Mixture => "mixture",
            Command::Distance => "distance",
            Command::Simulate => "simulate",
        }
    }
}

/// Runs the command and stores the resolved config, seed included, next to its report.
fn run(cli: Cli) -> Result<(Outcome, u64), CliError> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {threads} threads: {e}")))?;
    }
    let env_dir = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    let format = cli.format.unwrap_or(cfg.output.format);
    let sink = Sink::resolve(cli.out.as_deref(), env_dir, cfg.output.dir.as_deref(), format);
    let seed = cli.seed.unwrap_or(cfg.seed);
    let resolved = ExperimentConfig { seed, ..cfg.clone() };
    let ctx = Context { cfg, seed, sink };
    let outcome = match cli.command {
        Command::Verify => commands::verify::run(&ctx),
        Command::Factors => commands::factors::run(&ctx),
        Command::Bounds => commands::bounds::run(&ctx),
        Command::Mixture => commands::mixture::run(&ctx),
        Command::Distance => commands::distance::run(&ctx),
        Command::Simulate => commands::simulate::run(&ctx),
    }?;
    let config_path = ctx.sink.dir.join(format!("{}.config.toml", cli.command.name()));
    atomic_write(&config_path, resolved.to_toml().as_bytes())?;
    Ok((outcome, seed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli) {
        Ok((outcome, seed)) => {
            println!(
                "{name}: {} rows, {}, seed {seed}, written to {}",
                outcome.rows,
                outcome.status.as_str(),
                outcome.path.display()
            );
            ExitCode::from(outcome.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("bdstein {name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
