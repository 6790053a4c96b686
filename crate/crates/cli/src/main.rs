//! `babf`: simulate, fit, benchmark and diagnose functional-data models.

mod benchmark;
mod config;
mod diagnose;
mod fit;
mod io;
mod manifest;
mod results;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

/// Exit codes.
const EXIT_INPUT: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_SAMPLER: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "babf", version, about = "Bayesian smoothing of functional data with basis-function Gibbs sampling")]
struct Cli {
    /// Worker threads for chains and replications (0 = all cores).
    #[arg(long, global = true, env = "BABF_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset from a design file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the design seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the model to long-format `curve_id,t,y` data.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the sampler seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        chains: Option<usize>,
        /// Total sweeps per chain, burn-in included.
        #[arg(long)]
        sweeps: Option<usize>,
        #[arg(long)]
        burnin: Option<usize>,
        /// Also write traces.csv with the monitored scalars.
        #[arg(long)]
        traces: bool,
        /// Directory with truth.csv, truth_mean.csv and truth_cov.csv.
        /// Defaults to the data file's directory when those files exist.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run a simulation suite and tabulate RMSE and coverage.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a fit and write plot data.
    Diagnose {
        #[arg(long)]
        results: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<u8> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global().context("configuring thread pool")?;
    }
    match cli.command {
        Command::Simulate { config, out, seed } => simulate::run(&config, &out, seed).map(|_| 0),
        Command::Fit { data, config, out, seed, chains, sweeps, burnin, traces, truth } => {
            let args = fit::FitArgs { data, config, out, seed, chains, sweeps, burnin, traces, truth };
            let converged = fit::run(&args)?;
            Ok(if converged { 0 } else { EXIT_NOT_CONVERGED })
        }
        Command::Benchmark { config, out } => benchmark::run(&config, &out).map(|_| 0),
        Command::Diagnose { results } => {
            print!("{}", diagnose::run(&results)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if fit::is_sampler_failure(&e) { EXIT_SAMPLER } else { EXIT_INPUT })
        }
    }
}
