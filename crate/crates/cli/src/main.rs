//! `mapc`: command-line front end for fitting, forecasting, cross-prediction
//! and scoring of multivariate APC models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mapc_core::{Error, Result};

use crate::commands::Context;
use crate::config::RunConfig;

/// Log verbosity, e.g. `MAPC_LOG=debug`.
const LOG_ENV: &str = "MAPC_LOG";

#[derive(Debug, Parser)]
#[command(name = "mapc", version, about = "Correlated multivariate age-period-cohort models")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    chains: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Held-out block `stratum:first-last` (one-based); repeatable.
    #[arg(long, global = true)]
    mask: Vec<String>,
    /// Comma-separated interval levels, e.g. `0.5,0.8,0.95`.
    #[arg(long, global = true, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    /// Input cell CSV.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[arg(long, global = true)]
    burn_in: Option<usize>,
    #[arg(long, global = true)]
    thinning: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset with known truth.
    Synth,
    /// Validate a cell CSV and rewrite it in canonical form.
    Ingest,
    /// Run the sampler and write posterior summaries and the sample archive.
    Fit,
    /// Fit with masked blocks held out and predict every unobserved cell.
    Forecast,
    /// Cross-prediction over both halves of every stratum.
    Crosspred,
    /// Lee-Carter baseline fit and projection of masked blocks.
    Leecarter,
    /// Score a prediction CSV against a truth table.
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

fn effective_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.propagate_seed();
    if let Some(chains) = common.chains {
        cfg.sampler.chains = chains;
    }
    if let Some(v) = common.iterations {
        cfg.sampler.iterations = v;
    }
    if let Some(v) = common.burn_in {
        cfg.sampler.burn_in = v;
    }
    if let Some(v) = common.thinning {
        cfg.sampler.thinning = v;
    }
    if let Some(out) = &common.out {
        cfg.output = out.clone();
    }
    if !common.mask.is_empty() {
        cfg.forecast.mask = common.mask.clone();
    }
    if let Some(levels) = &common.levels {
        cfg.forecast.levels = levels.clone();
    }
    if let Some(input) = &common.input {
        cfg.input.table = Some(input.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let ctx = Context::new(effective_config(&cli.common)?)?;
    log::info!("config_hash={} seed={}", ctx.hash, ctx.cfg.seed);
    match cli.command {
        Command::Synth => commands::synth(&ctx),
        Command::Ingest => commands::ingest(&ctx),
        Command::Fit => commands::fit(&ctx),
        Command::Forecast => commands::forecast(&ctx),
        Command::Crosspred => commands::crosspred(&ctx),
        Command::Leecarter => commands::leecarter(&ctx),
        Command::Score { predictions, truth } => commands::score(&ctx, &predictions, &truth),
    }
}

fn error_record(e: &Error) -> String {
    serde_json::json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::FAILURE
        }
    }
}
