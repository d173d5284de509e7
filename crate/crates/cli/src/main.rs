use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stfm_cli::{commands, error_json, RunConfig};

#[derive(Parser)]
#[command(
    name = "stfm",
    version,
    about = "Bayesian spatio-temporal functional model with blocks and repeated measures"
)]
struct Cli {
    /// Worker threads for chains, grid cells and replicates [default: logical cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override every seed in the config file
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the `simulate` section
    Simulate {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Fit the model: chain CSVs, summary and convergence verdict
    Fit {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Score every (kappa, basis) cell by LPML and DIC7
    Select {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// R-hat, ESS and posterior summaries for stored chains
    Diagnose {
        #[arg(short, long)]
        config: PathBuf,
        /// Directory holding chain files [default: output_dir]
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Posterior predictive intervals for the configured targets
    Predict {
        #[arg(short, long)]
        config: PathBuf,
        /// Directory holding chain files [default: output_dir]
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Run a simulation study: prior_sensitivity, size_sensitivity,
    /// kappa_recovery or prediction
    Study {
        name: String,
        #[arg(short, long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> stfm::Result<serde_json::Value> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| stfm::Error::Config(format!("thread pool: {e}")))?;
    }
    let load = |p: &PathBuf| RunConfig::load(p, cli.seed);
    match &cli.command {
        Command::Simulate { config } => commands::simulate(&load(config)?),
        Command::Fit { config } => commands::fit(&load(config)?),
        Command::Select { config } => commands::select(&load(config)?),
        Command::Diagnose { config, run } => commands::diagnose(&load(config)?, run.as_deref()),
        Command::Predict { config, run } => commands::predict(&load(config)?, run.as_deref()),
        Command::Study { name, config } => commands::study(&load(config)?, name),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
