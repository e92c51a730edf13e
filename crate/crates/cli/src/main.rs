//! `stockdiff` command-line entry point.

mod commands;
mod config;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AugmentArgs, Context, SampleArgs};
use config::{Emit, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "stockdiff", version, about = "Conditional diffusion augmentation for price windows")]
struct Cli {
    /// Flat JSON config with dotted keys
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; required by train, sample and augment
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Repeat for more log output
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the window store from a price CSV
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        denylist: Option<PathBuf>,
    },
    /// Train the score network on the store's training windows
    Train {
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Generate windows for one condition
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        industry: Option<usize>,
        /// main, star, chinext, bse, or the slot index
        #[arg(long)]
        board: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_enum)]
        emit: Option<Emit>,
    },
    /// Append synthetic windows for one board
    Augment {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        board: String,
        /// Real to synthetic ratio, e.g. 1:1
        #[arg(long)]
        ratio: String,
        /// Start from noised windows of this board instead of pure noise
        #[arg(long)]
        transfer_from: Option<String>,
    },
    /// Run the top-k/drop-k simulation
    Backtest {
        /// CSV with date,ticker,score,realized_return
        #[arg(long)]
        panel: Option<PathBuf>,
        /// Price CSV scored by the momentum predictor
        #[arg(long)]
        prices: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Summarize the artifacts in the output directory
    Report,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if let Some(out) = cli.out {
        cfg.paths.out = out;
    }
    let ctx = Context::new(cfg);
    match cli.command {
        Command::Ingest { input, denylist } => commands::ingest(&ctx, input, denylist),
        Command::Train { store } => commands::train_cmd(&ctx, store),
        Command::Sample { checkpoint, industry, board, samples, emit } => {
            commands::sample_cmd(&ctx, SampleArgs { checkpoint, industry, board, samples, emit })
        }
        Command::Augment { store, checkpoint, board, ratio, transfer_from } => {
            commands::augment(&ctx, AugmentArgs { store, checkpoint, board, ratio, transfer_from })
        }
        Command::Backtest { panel, prices, k } => commands::backtest(&ctx, panel, prices, k),
        Command::Report => commands::report(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
