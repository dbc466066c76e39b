//! `spdec`: random k-SAT experiments with survey propagation guided decimation.

mod commands;
mod config;
mod record;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Flags};

#[derive(Parser)]
#[command(name = "spdec", version, about = "Survey propagation guided decimation experiments on random k-SAT")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random formula and write it as DIMACS with a JSON sidecar.
    Generate(Flags),
    /// Run one guided decimation and write its step trace as JSON lines.
    Solve(Flags),
    /// Estimate success rates over a density grid, with a coin-flip baseline.
    Sweep(Flags),
    /// Biases, typical values, certificate sets and quasirandomness of `Φ_t`.
    Diagnose(Flags),
    /// Compare SP marginals with enumerated covers.
    Covers(Flags),
    /// Audit the quasirandomness properties of `Φ_t`.
    Quasirandom(Flags),
}

type Action = fn(&ExperimentConfig) -> anyhow::Result<()>;

fn run(cli: Cli) -> anyhow::Result<()> {
    let (name, flags, action): (&str, &Flags, Action) = match &cli.command {
        Command::Generate(f) => ("generate", f, commands::generate),
        Command::Solve(f) => ("solve", f, commands::solve),
        Command::Sweep(f) => ("sweep", f, commands::sweep),
        Command::Diagnose(f) => ("diagnose", f, commands::diagnose),
        Command::Covers(f) => ("covers", f, commands::covers),
        Command::Quasirandom(f) => ("quasirandom", f, commands::quasirandom),
    };
    action(&ExperimentConfig::resolve(name, flags)?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
