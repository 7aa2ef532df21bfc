use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Gradient-leakage reconstruction attack toolkit.
///
/// Every config key can also be given as `--key=value`; such flags override
/// values from `--config`.
#[derive(Parser, Debug)]
#[command(name = "leakfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Config file with `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (defaults to the `out_dir` key).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the surrogate autoencoder, craft the leak module, save checkpoints.
    Prepare(Common),
    /// Run one attacked round from saved checkpoints; write images and a report.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Directory holding `autoencoder.llae` and `model.llgm`.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Recompute metrics from the artifacts of a previous `attack`.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory written by `attack` (defaults to the output directory).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Batch-size sweep with repeated trials.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Reuse checkpoints instead of preparing from scratch.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// End-to-end run on synthetic shapes at a batch size of k/4.
    Demo(Common),
}

fn main() -> ExitCode {
    let (overrides, rest) = commands::split_overrides(std::env::args());
    let cli = Cli::parse_from(rest);
    let result = match cli.command {
        Command::Prepare(c) => commands::prepare(&c, &overrides),
        Command::Attack { common, checkpoints } => commands::attack(&common, checkpoints, &overrides),
        Command::Evaluate { common, dir } => commands::evaluate(&common, dir, &overrides),
        Command::Experiment { common, checkpoints } => commands::experiment(&common, checkpoints, &overrides),
        Command::Demo(c) => commands::demo(&c, &overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
