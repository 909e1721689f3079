//! Command-line surface: dataset generation (`taskgen`), experiment
//! execution (`run`), and report emission (`report`).
//!
//! Exit codes: 0 full success, 1 partial or runtime failure, 2 config
//! error. `CONTIR_THREADS` caps worker parallelism.

mod config;
mod report;
mod run;
mod taskgen;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "contir", version, about = "Continual learning for neural rankers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate task files and the topic distance matrix.
    Taskgen {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for task files.
        #[arg(long)]
        out: PathBuf,
        /// Override the dataset seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Execute the experiment grid described by the config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Root directory for run directories.
        #[arg(long)]
        out: PathBuf,
        /// Run only this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Write manifests without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Aggregate completed runs under a root into tables and sweep curves.
    Report {
        /// Root directory containing run directories.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(value) = std::env::var("CONTIR_THREADS") {
        match value.parse::<usize>() {
            Ok(n) => contir::exec::init_thread_cap(Some(n)),
            Err(_) => {
                eprintln!("config error: CONTIR_THREADS must be an integer, got {value:?}");
                return ExitCode::from(2);
            }
        }
    }
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Taskgen { config, out, seed } => {
            let experiment = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return config_failure(e),
            };
            taskgen::taskgen(&experiment, &out, seed)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            config,
            out,
            seed,
            dry_run,
        } => {
            let experiment = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return config_failure(e),
            };
            let summary = run::run(&experiment, &out, seed, dry_run)?;
            println!(
                "{} run(s) completed, {} failed",
                summary.completed,
                summary.failed.len()
            );
            if summary.failed.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
        Command::Report { out } => {
            report::report(&out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn config_failure(e: anyhow::Error) -> anyhow::Result<ExitCode> {
    eprintln!("config error: {e:#}");
    Ok(ExitCode::from(2))
}
