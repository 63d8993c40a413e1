//! `gfl`: size, benchmark, cost and training reports for the transformer,
//! low-rank transformer and Linformer variants.

mod commands;
mod config;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "gfl", version, about = "Efficiency reports for low-rank and linear-attention transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parameter counts per variant across ranks, with log2 columns.
    Size {
        /// Run configuration (JSON); defaults to the 768/12/3072 two-layer encoder.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated ranks, e.g. 32,64,128. May be empty.
        #[arg(long)]
        ranks: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Timed sweep over variants, lengths and ranks.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Grid JSON: {"ranks": [...], "seq_lens"?: [...], "variants"?: [...], "mode"?: "fwd"|"fwd_bwd"}.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretraining cost table from efficiency factors.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the configured variant as a sequence classifier.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset JSON, e.g. {"kind": "synthetic", "n_classes": 4, "seq_len": 32, "n_train": 4000, "n_test": 1000}.
        #[arg(long)]
        dataset: PathBuf,
        /// Per-epoch metric history (CSV).
        #[arg(long)]
        out: PathBuf,
        /// Writes the best parameters here, plus a `.json` description beside it.
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Checks the cost model against instrumented forwards and core invariants.
    Validate {
        #[arg(long, hide = true)]
        inject_analytic_off_by_one: bool,
    },
}

fn run(cmd: Command) -> anyhow::Result<bool> {
    match cmd {
        Command::Size { config, ranks, out } => {
            let cfg = RunConfig::load(config.as_deref())?;
            commands::size(&cfg, &commands::parse_ranks(&ranks)?, &out)?;
        }
        Command::Bench { config, grid, out } => {
            let cfg = RunConfig::load(config.as_deref())?;
            commands::bench(&cfg, &grid, &out)?;
        }
        Command::Estimate { input, out } => commands::estimate_costs(&input, &out)?,
        Command::Train {
            config,
            dataset,
            out,
            save_model,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            commands::train_model(&cfg, &dataset, &out, save_model.as_deref())?;
        }
        Command::Validate {
            inject_analytic_off_by_one,
        } => {
            return Ok(validate::run(validate::Faults {
                analytic_off_by_one: inject_analytic_off_by_one,
            }))
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
