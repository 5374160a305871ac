use std::path::PathBuf;
use std::process::ExitCode;

use caref_cli::{gradcheck, report, sweep, train, Result};
use clap::{Parser, Subcommand};

/// Gradient audits, training runs, sweeps and reports for the SCED objective.
#[derive(Debug, Parser)]
#[command(name = "caref", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare analytic logit gradients with central finite differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        /// Maximum accepted relative error.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train the toy model once and write history, model and data.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every grid point and seed; write one CSV row per run.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Concurrent runs (default: one per CPU).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Summarize a sweep CSV per grid point.
    Report {
        csv: PathBuf,
        /// Also write summary.json to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gradcheck { config, threshold } => {
            gradcheck::cmd_gradcheck(&config, threshold).map(drop)
        }
        Command::Train { config, out } => train::cmd_train(&config, &out).map(drop),
        Command::Sweep { config, out, jobs } => sweep::cmd_sweep(&config, &out, jobs).map(drop),
        Command::Report { csv, out } => report::cmd_report(&csv, out.as_deref()).map(drop),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
