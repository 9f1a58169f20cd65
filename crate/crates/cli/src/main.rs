//! `prt-forge`: generate reasoning traces, assess cases and report results.

mod cmd;
mod config;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Overrides, Settings};
use crate::workspace::Workspace;

/// Exit status when a command finished but too many records were
/// quarantined or flagged.
const EXIT_THRESHOLD: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "prt-forge", version, about = "Policy reasoning trace pipeline")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel cases per run.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    concurrency: Option<u64>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Largest tolerated share of quarantined or flagged records.
    #[arg(long, global = true)]
    max_flagged_fraction: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate PRTs for the train split with an expert model.
    Gen(cmd::gen::GenArgs),
    /// Assess the test split with a learner model.
    Assess(cmd::assess::AssessArgs),
    /// Metrics, significance tests, cost and Pareto tables over runs.
    Report(cmd::report::ReportArgs),
    /// Instruction-tuning records from a PRT store.
    ExportSft(cmd::export::ExportArgs),
    /// Check configured inputs and existing PRT stores.
    Validate(cmd::validate::ValidateArgs),
}

/// How a command that did not error ended.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ok,
    OverThreshold {
        what: &'static str,
        count: usize,
        total: usize,
        limit: f64,
    },
}

impl Outcome {
    pub fn check(what: &'static str, count: usize, total: usize, limit: f64) -> Self {
        if total > 0 && count as f64 / total as f64 > limit {
            Outcome::OverThreshold {
                what,
                count,
                total,
                limit,
            }
        } else {
            Outcome::Ok
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let settings = Settings::load(
        cli.config.as_deref(),
        Overrides {
            seed: cli.seed,
            concurrency: cli.concurrency.map(|c| c as usize),
            cache_dir: cli.cache_dir,
            out_dir: cli.out_dir,
            max_flagged_fraction: cli.max_flagged_fraction,
        },
    )?;
    let mut ws = Workspace::open(settings)?;
    match &cli.command {
        Command::Gen(a) => cmd::gen::run(&mut ws, a),
        Command::Assess(a) => cmd::assess::run(&mut ws, a),
        Command::Report(a) => cmd::report::run(&mut ws, a),
        Command::ExportSft(a) => cmd::export::run(&mut ws, a),
        Command::Validate(a) => cmd::validate::run(&mut ws, a),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    match run(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::OverThreshold {
            what,
            count,
            total,
            limit,
        }) => {
            eprintln!("error: {count} of {total} records {what}, above the limit of {limit}");
            ExitCode::from(EXIT_THRESHOLD)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
