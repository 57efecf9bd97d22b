//! Command-line driver: `quant fetch|train|backtest|report|selftest`.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "quant", version, about = "Model-based RL trading research engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; defaults apply without one.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed of the first run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Strategy variant (pets, mbpo, m2ac, rspo, rsac).
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Download and cache the configured tickers.
    Fetch,
    /// Train the configured variant on the training split.
    Train,
    /// Evaluate trained checkpoints on the test split.
    Backtest,
    /// Combine the backtests of all variants.
    Report,
    /// Run the embedded oracle checks.
    Selftest,
}

pub const EXIT_DOMAIN: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// Config file plus flag overrides.
pub fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(v) = &cli.variant {
        let registry = quant_core::agents::StrategyRegistry::with_defaults();
        if !registry.contains(v) {
            anyhow::bail!("unknown variant {v:?}; known: {}", registry.names().join(", "));
        }
        cfg.train.variant = v.to_lowercase();
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report_error(e: &anyhow::Error) {
    eprintln!("error: {e}");
    for cause in e.chain().skip(1) {
        eprintln!("  caused by: {cause}");
    }
}

/// Runs one command and maps the outcome to an exit code.
pub fn run(cli: &Cli) -> ExitCode {
    if cli.command == Command::Selftest {
        return match commands::cmd_selftest() {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(EXIT_DOMAIN),
            Err(e) => {
                report_error(&e);
                ExitCode::from(EXIT_DOMAIN)
            }
        };
    }
    let cfg = match resolve_config(cli) {
        Ok(c) => c,
        Err(e) => {
            report_error(&e);
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = match cli.command {
        Command::Fetch => commands::cmd_fetch(&cfg).map(drop),
        Command::Train => commands::cmd_train(&cfg).map(drop),
        Command::Backtest => commands::cmd_backtest(&cfg).map(drop),
        Command::Report => commands::cmd_report(&cfg).map(drop),
        Command::Selftest => unreachable!("handled above"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::from(EXIT_DOMAIN)
        }
    }
}
