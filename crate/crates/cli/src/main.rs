//! `hofmn` — train toy models, tune attack configurations, run attacks,
//! export robustness curves, and compare against binary-searched
//! fixed-budget attacks.
//!
//! Exit codes: 0 success, 1 attack found nothing (all samples robust),
//! 2 usage or configuration error.

mod commands;
mod util;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "hofmn", version, about = "Minimum-norm attack tuning and robustness evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a small standard or adversarially trained classifier on a
    /// synthetic dataset and write it to disk.
    TrainToy(commands::TrainToyArgs),
    /// Tune attack configurations with Bayesian optimization and write the
    /// trial history plus a ranked summary.
    Tune(commands::TuneArgs),
    /// Run one attack configuration over a dataset and write per-sample
    /// results.
    Attack(commands::AttackArgs),
    /// Turn a result file into a robustness-curve CSV over an epsilon grid.
    Curve(commands::CurveArgs),
    /// Compare a single minimum-norm run against a per-sample binary search
    /// of a fixed-budget attack.
    Compare(commands::CompareArgs),
    /// Run quick internal consistency checks.
    Selftest(commands::SelftestArgs),
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::TrainToy(args) => commands::train_toy(args),
        Command::Tune(args) => commands::tune(args),
        Command::Attack(args) => commands::attack(args),
        Command::Curve(args) => commands::curve(args),
        Command::Compare(args) => commands::compare(args),
        Command::Selftest(args) => commands::selftest(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
