//! awp: drive the whole pipeline from a shell. Generate or ingest data,
//! train a base classifier, perturb its weights into carrying a backdoor,
//! sweep the attack grid, evaluate checkpoints, diff weights.
//!
//! Every artifact-producing run lands in its own directory under
//! `runs/` with a manifest recording resolved settings, seeds, and
//! input/output digests, so any result can be traced and repeated.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::Ctx;
use error::CliResult;

#[derive(Parser)]
#[command(
    name = "awp",
    version,
    about = "Backdoor injection into trained classifiers via bounded weight perturbation"
)]
struct Cli {
    /// Flat key=value settings file; command-line flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Parent directory for run outputs.
    #[arg(long, global = true, default_value = "runs", value_name = "DIR")]
    runs_root: PathBuf,

    /// Run directory suffix; defaults to the subcommand name.
    #[arg(long, global = true, value_name = "NAME")]
    tag: Option<String>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic image or text classification dataset.
    GenData(commands::gen_data::Args),
    /// Train a base classifier on dataset files.
    TrainBase(commands::train_base::Args),
    /// Perturb a trained checkpoint so a trigger forces the target label.
    Attack(commands::attack::Args),
    /// Run one attack per grid point over epsilon or lambda values.
    Sweep(commands::sweep::Args),
    /// Evaluate a base/attacked checkpoint pair on a test set.
    Eval(commands::eval::Args),
    /// Compare two checkpoints: global and per-tensor weight deltas.
    WeightDiff(commands::weight_diff::Args),
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let ctx = Ctx {
        config: cli.config,
        runs_root: cli.runs_root,
        tag: cli.tag,
    };
    match cli.cmd {
        Cmd::GenData(a) => commands::gen_data::run(&ctx, &a),
        Cmd::TrainBase(a) => commands::train_base::run(&ctx, &a),
        Cmd::Attack(a) => commands::attack::run(&ctx, &a),
        Cmd::Sweep(a) => commands::sweep::run(&ctx, &a),
        Cmd::Eval(a) => commands::eval::run(&ctx, &a),
        Cmd::WeightDiff(a) => commands::weight_diff::run(&a),
    }
}

fn main() {
    // clap already exits with code 2 on bad flags, matching the usage class.
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
