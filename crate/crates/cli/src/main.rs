//! Command-line front end for the Gibbs-posterior SMC sampler.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "gibbs-rb",
    version,
    about = "Gibbs posteriors with adaptive SMC and local reduced bases"
)]
struct Cli {
    /// Worker threads; defaults to the available cores. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the adaptive SMC sampler.
    RunSmc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Exit with an error when any bound check fails.
        #[arg(long)]
        verify: bool,
    },
    /// Run the random-walk Metropolis–Hastings reference chain.
    RunMcmc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate the loss weight by residual matching.
    SelectWeight {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare run outputs; the last `--run` is the reference.
    Compare {
        /// Output directories or CSV files (particles, chain or oracle grid).
        #[arg(long = "run", required = true, num_args = 1)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the posterior on a tensor grid with full solves.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Nodes per coordinate, e.g. `60x60`.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::RunSmc {
            config,
            seed,
            out,
            verify,
        } => commands::run_smc(&config, seed, &out, verify),
        Command::RunMcmc { config, seed, out } => commands::run_mcmc(&config, seed, &out).map(|_| true),
        Command::SelectWeight { config, seed, out } => {
            commands::select_weight(&config, seed, &out).map(|_| true)
        }
        Command::Compare { runs, out } => commands::compare(&runs, &out).map(|_| true),
        Command::Oracle { config, grid, out } => {
            commands::oracle(&config, grid.as_deref(), &out).map(|_| true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("bound checks failed; see bounds.json");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
