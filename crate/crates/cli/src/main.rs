mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::json;

use commands::{AttackArgs, Common, EvalArgs, ExportArgs, GenDataArgs, SmoothEvalArgs, TrainArgs, TransferArgs};
use error::CliError;

/// Evasion attacks on graph classifiers: data generation, victim and
/// strategy training, attacks, transfer and smoothing experiments.
#[derive(Parser)]
#[command(name = "projrank", version, about)]
struct Cli {
    /// TOML settings for the subcommand, keyed like its flags; flags win.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
    /// Replace existing output files.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate BA-2Motifs or ingest a TU dataset, then split it.
    GenData(GenDataArgs),
    /// Train a victim classifier or an attack strategy.
    Train(TrainArgs),
    /// Attack graphs and write a per-graph report.
    Attack(AttackArgs),
    /// Tabulate attack reports.
    Eval(EvalArgs),
    /// Reuse one strategy across budgets on seen and unseen graphs.
    Transfer(TransferArgs),
    /// Accuracy with and without randomized smoothing.
    SmoothEval(SmoothEvalArgs),
    /// Write DOT drawings of adversarial samples.
    Export(ExportArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = Common { config: cli.config.as_deref(), force: cli.force };
    match &cli.command {
        Command::GenData(a) => commands::gen_data(a, &common),
        Command::Train(a) => commands::train(a, &common),
        Command::Attack(a) => commands::attack(a, &common),
        Command::Eval(a) => commands::eval(a, &common),
        Command::Transfer(a) => commands::transfer(a, &common),
        Command::SmoothEval(a) => commands::smooth_eval(a, &common),
        Command::Export(a) => commands::export(a, &common),
    }
}

fn main() -> ExitCode {
    let result = match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => Err(CliError::Usage(e.render().to_string().trim().to_string())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": { "category": e.category(), "message": e.to_string() } }));
            ExitCode::from(e.exit_code())
        }
    }
}
