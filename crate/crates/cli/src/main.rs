mod bound;
mod config;
mod error;
mod runner;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RawConfig;
use error::CliError;

/// Federated learning simulator.
#[derive(Debug, Parser)]
#[command(name = "fedsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Base seed, replacing run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, replacing output.dir.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Sweep cells run concurrently (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every sweep cell and write one CSV per cell plus manifest.csv.
    Run { config: PathBuf },
    /// Write the (E, M) trade-off under a communication budget to bound.csv.
    Bound { config: PathBuf },
}

fn load(path: &PathBuf) -> Result<RawConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut raw = RawConfig::parse(&text)?;
    raw.apply_env(std::env::vars())?;
    Ok(raw)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs == Some(0) {
        eprintln!("fedsim: --jobs must be at least 1");
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::Run { config } => load(config).and_then(|raw| {
            let dir = runner::run_sweep(&raw, cli.seed, cli.out_dir.clone(), cli.jobs)?;
            println!("wrote {}", dir.join("manifest.csv").display());
            Ok(())
        }),
        Command::Bound { config } => load(config).and_then(|raw| {
            let (path, report) = bound::bound_report(&raw, cli.seed, cli.out_dir.clone())?;
            println!("alpha = {}", report.alpha);
            match report.best() {
                Some(r) => println!(
                    "minimizer: E = {}, M = {}, K = {}, bound = {:e}",
                    r.local_steps, r.participants, r.rounds, r.bound.total
                ),
                None => println!("no feasible (E, M) pair within the budget"),
            }
            println!("wrote {}", path.display());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
