//! Experiment runner: sampling, statistical sweeps, roofline curves, and
//! cache simulation, each a pure function of (config, seed) emitting
//! diff-able tab-separated text with a `#`-prefixed manifest header.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 internal invariant
//! violation.

mod commands;
mod config;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use specdec::Error;

use commands::{AnalyzeArgs, KvsimArgs, RooflineArgs, SampleArgs};

#[derive(Parser)]
#[command(
    name = "specdec",
    about = "Desk-scale speculative-decoding laboratory",
    disable_help_subcommand = true
)]
struct Cli {
    /// Plain key=value defaults file; explicit flags override it.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
    /// Root random seed. Falls back to the config file, then the
    /// SPECDEC_SEED environment variable, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Draw complete strings with one of the decoding algorithms.
    Sample(SampleArgs),
    /// Bias/variance sweeps, ESS-rate checks, and exact divergences.
    Analyze(AnalyzeArgs),
    /// Closed-form speed-up curves and arithmetic-intensity tables.
    Roofline(RooflineArgs),
    /// Replay or synthesize a paged-cache workload and report usage.
    Kvsim(KvsimArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let defaults = match config::Defaults::load(cli.config.as_deref(), cli.seed) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("specdec: {e}");
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Sample(args) => commands::run_sample(args, &defaults),
        Command::Analyze(args) => commands::run_analyze(args, &defaults),
        Command::Roofline(args) => commands::run_roofline(args, &defaults),
        Command::Kvsim(args) => commands::run_kvsim(args, &defaults),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("specdec: {e}");
            match e {
                Error::Internal(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
