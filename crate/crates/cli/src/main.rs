//! `scan`: generate toy corpora, train with or without pruning, export
//! coresets and compare methods.
//!
//! Errors go to stderr as one JSON line. Exit codes: 1 runtime failure,
//! 2 bad command line, 3 missing input file, 4 invalid configuration.

mod commands;
mod error;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::{CompareArgs, ExportArgs, GenDataArgs, ScheduleArgs, TrainArgs};
use error::{Failure, Kind};

#[derive(Parser, Debug)]
#[command(name = "scan", version, about = "Bootstrapped dataset pruning for contrastive training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a paired corpus with planted mismatched and duplicate pairs
    GenData(GenDataArgs),
    /// Train one model and write a run directory
    Train(TrainArgs),
    /// Print the per-epoch phase and mutation ratio as CSV
    Schedule(ScheduleArgs),
    /// Build a static coreset from two SCAN run directories
    ExportCoreset(ExportArgs),
    /// Train several methods on one corpus and tabulate probe accuracy and cost
    Compare(CompareArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("bad arguments").trim_start_matches("error: ").to_string();
            return fail(Failure::new(Kind::Usage, first));
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Schedule(a) => commands::schedule(a),
        Command::ExportCoreset(a) => commands::export(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}

fn fail(f: Failure) -> ExitCode {
    eprintln!("{}", f.line());
    ExitCode::from(f.kind.exit_code())
}
