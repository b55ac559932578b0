//! `sweeping`: penalty runs, catch-up oracles and Maximum Principle checks.
//!
//! Exit status is 0 on success, 1 when a checked condition fails and 2 for
//! usage or configuration errors.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "sweeping", version, about = "Controlled sweeping processes via exponential penalties")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate one penalty level or the catch-up scheme.
    Simulate(commands::SimulateArgs),
    /// Run the whole penalty schedule against the catch-up oracle.
    Converge(commands::ConvergeArgs),
    /// Integrate the adjoint backwards along a penalty trajectory.
    Adjoint(commands::AdjointArgs),
    /// Score a multiplier candidate against the Maximum Principle.
    CheckMp(commands::CheckMpArgs),
    /// Closed-form solution, certificate and report for the first example.
    Example1(commands::Example1Args),
    /// Switch-time search for the drift example.
    Example2(commands::Example2Args),
    /// Measure the problem constants and check the standing assumptions.
    Validate(commands::ValidateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Converge(a) => commands::converge(a),
        Command::Adjoint(a) => commands::adjoint(a),
        Command::CheckMp(a) => commands::check_mp(a),
        Command::Example1(a) => commands::example1(a),
        Command::Example2(a) => commands::example2(a),
        Command::Validate(a) => commands::validate(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
