//! `cropchain` — command-line front end for the crop-monitoring toolkit.
//!
//! Subcommands cover the whole pipeline: `train` a segmentation network
//! on synthetic fields, `prune` it iteratively, build a `roadmap` of
//! pruned variants with resource profiles, `select` a variant under
//! budgets, `simulate` a UAV survey mission, and manage the supply-chain
//! `ledger`.
//!
//! Exit codes: 0 on success; 1 for an invalid invocation or input, with a
//! message naming the offending flag; 2 for internal errors. Every run
//! that writes artifacts also writes a `run_manifest.json` beside them
//! recording the full configuration, seed, code version, output paths,
//! and duration. Relative output directories can be re-rooted with the
//! `CROPCHAIN_OUT_DIR` environment variable.

mod cmd_ledger;
mod cmd_prune;
mod cmd_roadmap;
mod cmd_select;
mod cmd_simulate;
mod cmd_train;
mod manifest;
mod util;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cropchain",
    version,
    about = "On-device crop monitoring: segmentation training, filter pruning, \
             model roadmaps, budget-driven selection, a supply-chain ledger, and \
             UAV mission simulation",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the reference segmentation network on synthetic fields
    Train(cmd_train::TrainArgs),
    /// Iteratively prune a trained checkpoint
    Prune(cmd_prune::PruneArgs),
    /// Build the iterations x ratios roadmap of pruned variants
    Roadmap(cmd_roadmap::RoadmapArgs),
    /// Pick the most accurate roadmap variant that fits a budget
    Select(cmd_select::SelectArgs),
    /// Fly a simulated UAV survey mission against a ledger
    Simulate(cmd_simulate::SimulateArgs),
    /// Create, extend, audit, and verify the supply-chain ledger
    Ledger(cmd_ledger::LedgerArgs),
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Requested help/version is a success; everything else (unknown
            // flags, missing values, a bare invocation) prints usage and
            // exits 1.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train::run(args),
        Command::Prune(args) => cmd_prune::run(args),
        Command::Roadmap(args) => cmd_roadmap::run(args),
        Command::Select(args) => cmd_select::run(args),
        Command::Simulate(args) => cmd_simulate::run(args),
        Command::Ledger(args) => cmd_ledger::run(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) if util::is_user_error(&e) => {
            eprintln!("error: {e:#}");
            1
        }
        Err(e) => {
            eprintln!("internal error: {e:?}");
            2
        }
    }
}
