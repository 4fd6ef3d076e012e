//! `dwlab` command-line front end.
//!
//! Exit codes: 0 when every check passes, 1 when a check is violated or a
//! computation fails, 2 for configuration errors.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dwlab::Error;

use commands::{Context, Outcome};
use config::LoadedConfig;
use output::{Format, Output};

#[derive(Debug, Parser)]
#[command(name = "dwlab", version, about = "Linear spectral statistics of deformed Wigner matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Limiting bias, covariance kernel and bias bounds over the grid.
    Theory,
    /// Monte Carlo estimates of resolvent trace statistics.
    Simulate,
    /// Joins a simulation report with theory and applies thresholds.
    Compare,
    /// Density of the deterministic equivalent and integrals against it.
    Density,
    /// Exact pairing moments of Gaussian words and their free parts.
    Infinitesimal,
    /// Schur, resolvent identity and norm checks on sampled matrices.
    Identities,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Theory => "theory",
            Self::Simulate => "simulate",
            Self::Compare => "compare",
            Self::Density => "density",
            Self::Infinitesimal => "infinitesimal",
            Self::Identities => "identities",
        }
    }

    fn stochastic(self) -> bool {
        matches!(self, Self::Simulate | Self::Identities)
    }
}

fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_) | Error::Param(_) | Error::Input(_) | Error::Dimension(_) | Error::Io(_) | Error::Json(_)
    )
}

fn execute(cli: &Cli) -> Result<Outcome, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let config = LoadedConfig::load(path)?;
    let seed = if cli.command.stochastic() {
        Some(config.seed(cli.seed)?)
    } else {
        cli.seed.or(config.config.seed)
    };
    let out = Output::new(&cli.out_dir, cli.format, cli.command.name(), &config.digest, seed)?;
    let ctx = Context {
        config: &config,
        out: &out,
        seed,
        threads: cli.threads,
    };
    match cli.command {
        Command::Theory => commands::theory(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Compare => commands::compare(&ctx),
        Command::Density => commands::density(&ctx),
        Command::Infinitesimal => commands::infinitesimal(&ctx),
        Command::Identities => commands::identities(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(Outcome::Pass) => {
            println!("{}: pass", cli.command.name());
            ExitCode::SUCCESS
        }
        Ok(Outcome::Violation(failures)) => {
            for f in &failures {
                println!("violation: {f}");
            }
            println!("{}: {} violation(s)", cli.command.name(), failures.len());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}
