//! Command-line front door for the walk-estimation pipeline.
//!
//! The six subcommands cover the full workflow — simulate, fisher-map,
//! gen-data, train, evaluate, report — driven by one declarative TOML
//! configuration plus `--set key=value` overrides for sweeps. All randomness
//! flows from the single configured seed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ctqwalk_core::{Error, ErrorCategory};

/// Environment variable overriding the configured output directory.
const ENV_OUTPUT_DIR: &str = "CTQWALK_OUTPUT_DIR";
/// Environment variable capping the worker-thread count.
const ENV_THREADS: &str = "CTQWALK_THREADS";

#[derive(Parser)]
#[command(
    name = "ctqwalk",
    version,
    about = "Quantum-walk coupling estimation: simulation, information bounds, and a neural estimator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file.
    #[arg(long, short, global = true, default_value = "ctqwalk.toml")]
    config: PathBuf,

    /// Override a configuration key, e.g. --set training.epochs=5.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory (overrides CTQWALK_OUTPUT_DIR and the config file).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Global seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker-thread cap (overrides CTQWALK_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve one instance (or a coupling grid) and write site probabilities.
    Simulate,
    /// Fisher-information and Cramér–Rao landscapes over (chain length, time).
    FisherMap,
    /// Generate the bootstrapped train/validation dataset.
    GenData,
    /// Train the estimator network on a generated dataset.
    Train {
        /// Dataset directory (defaults to <output_dir>/dataset).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Start from stored weights instead of a fresh initialization.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Estimate couplings on test points and compare the variance to the CRB.
    Evaluate {
        /// Weight file (defaults to <output_dir>/train/weights.bin).
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Replace the network by an estimator that returns the true
        /// couplings; testing hook for the protocol's noise floor.
        #[arg(long)]
        perfect_oracle: bool,
    },
    /// Summarise an estimation report into tables and long-format CSV.
    Report {
        /// Directory holding report.csv and summary.json (defaults to
        /// <output_dir>/evaluate).
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> ctqwalk_core::Result<()> {
    let mut config = config::load_config(&cli.config, &cli.overrides)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let output_dir = cli
        .output_dir
        .or_else(|| std::env::var_os(ENV_OUTPUT_DIR).map(PathBuf::from))
        .unwrap_or_else(|| config.output_dir.clone());
    config.output_dir = output_dir.clone();

    let threads = cli
        .threads
        .or_else(|| {
            std::env::var(ENV_THREADS)
                .ok()
                .and_then(|raw| raw.parse().ok())
        })
        .unwrap_or(0);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    let effective_threads = rayon::current_num_threads();

    match &cli.command {
        Command::Simulate => commands::simulate(&config, &output_dir, effective_threads),
        Command::FisherMap => commands::cmd_fisher_map(&config, &output_dir, effective_threads),
        Command::GenData => commands::gen_data(&config, &output_dir, effective_threads),
        Command::Train { dataset, resume } => commands::cmd_train(
            &config,
            &output_dir,
            effective_threads,
            dataset.as_deref(),
            resume.as_deref(),
        ),
        Command::Evaluate {
            weights,
            perfect_oracle,
        } => commands::evaluate(
            &config,
            &output_dir,
            effective_threads,
            weights.as_deref(),
            *perfect_oracle,
        ),
        Command::Report { input } => {
            commands::cmd_report(&config, &output_dir, effective_threads, input.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            match error.category() {
                ErrorCategory::Config => ExitCode::from(2),
                ErrorCategory::Numerical => ExitCode::from(3),
                ErrorCategory::Io => ExitCode::from(4),
            }
        }
    }
}
