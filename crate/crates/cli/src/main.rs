//! `steady-auction`: stationary pools, winner and bid curves, simulation and
//! the acceptance suite from the command line.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 a selected
//! acceptance criterion failed.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use steady_auction::Error;

use crate::config::Overrides;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "steady-auction", version, about = "Steady state of unending sequential first-price auctions")]
#[command(after_help = "Settings are resolved as defaults, then --config, then flags.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stationary pool distribution for arrival rate --lambda (as λ*).
    Stationary,
    /// Winner cdf W, density w and success probability H by percentile.
    WinnerCurve,
    /// Equilibrium bids b(x) and expectations Z(x).
    BidCurve,
    /// Round-by-round simulation.
    Simulate,
    /// Recurrence class of the pool chain for --lambda (as λ*), --delta, --mu.
    Regime,
    /// Run acceptance criteria: all, zero-uncertainty, uncertainty,
    /// simulation, or ids such as 1,4,11.
    Verify {
        #[arg(default_value = "all")]
        suite: String,
    },
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    if let Command::Verify { suite } = &cli.command {
        return Ok(if commands::verify(suite)? { ExitCode::SUCCESS } else { ExitCode::from(3) });
    }
    let cfg = cli.opts.resolve()?;
    let out = &cli.opts.out;
    match cli.command {
        Command::Stationary => commands::stationary(&cfg, out)?,
        Command::WinnerCurve => commands::winner_curve(&cfg, out)?,
        Command::BidCurve => commands::bid_curve(&cfg, out)?,
        Command::Simulate => commands::simulation(&cfg, out)?,
        Command::Regime => commands::regime(&cfg)?,
        Command::Verify { .. } => unreachable!("handled above"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Core(Error::NonErgodic { regime, .. }) = &e {
                eprintln!("  {regime}: {}", regime.explanation());
            }
            ExitCode::from(e.exit_code())
        }
    }
}
