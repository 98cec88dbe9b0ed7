//! `specdec exact | simulate | batch-scan | pareto <config.json>`
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical guard tripped,
//! 1 output could not be written.

mod commands;
mod config;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{Config, Format};
use output::Table;

#[derive(Parser)]
#[command(name = "specdec", version, about = "Speculative decoding rejection analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact expected rejections, batch improvement and acceleration rate.
    Exact(Common),
    /// Monte Carlo campaign with running means and error bars.
    Simulate(Common),
    /// Expected rejections across batch sizes, plus the unbounded limit.
    BatchScan(Common),
    /// Rejection probability vs minimal bias over an ε grid.
    Pareto(Common),
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration file.
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl Common {
    /// The config file with command-line overrides applied.
    fn config(&self) -> Result<Config> {
        let mut config = Config::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(runs) = self.runs {
            config.runs = Some(runs);
        }
        if let Some(out) = &self.out {
            config.output = Some(out.clone());
        }
        if let Some(format) = self.format {
            config.format = format;
        }
        if config.runs == Some(0) {
            anyhow::bail!("runs must be positive");
        }
        Ok(config)
    }
}

#[derive(Debug)]
struct WriteFailure;

impl std::fmt::Display for WriteFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("cannot write output")
    }
}

impl std::error::Error for WriteFailure {}

fn run(cli: Cli) -> Result<()> {
    let (args, command): (&Common, fn(&Config) -> Result<Table>) = match &cli.command {
        Command::Exact(a) => (a, commands::exact),
        Command::Simulate(a) => (a, commands::simulate),
        Command::BatchScan(a) => (a, commands::batch_scan_cmd),
        Command::Pareto(a) => (a, commands::pareto),
    };
    let config = args.config()?;
    let bytes = command(&config)?.render(&config)?;
    match &config.output {
        Some(path) => std::fs::write(path, &bytes)
            .map_err(|e| anyhow::Error::new(e).context(WriteFailure))
            .with_context(|| path.display().to_string()),
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| anyhow::Error::new(e).context(WriteFailure)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<WriteFailure>().is_some() {
        return 1;
    }
    match e.downcast_ref::<specdec::Error>() {
        Some(specdec::Error::NumericalGuard(_)) => 3,
        _ => 2,
    }
}
