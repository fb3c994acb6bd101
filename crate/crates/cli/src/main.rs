//! `rubikpp` command-line front end.
//!
//! Exit codes: 0 ok, 2 usage, 3 I/O, 4 domain error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Bad flag values, override syntax, or config schema violations.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "rubikpp", version, about = "Volumetric cube-layer disarrangement and restoration pretraining")]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every experiment stage.
#[derive(Args, Debug, Clone, Default)]
pub struct ExpArgs {
    /// TOML config file; missing keys take their defaults.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. `--set pretrain.steps=100`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Experiment seed; wins over the config file and `--set seed=`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shorthand for `--set output_dir=DIR`.
    #[arg(short, long, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Rotate random cube layers of a volume and write the record.
    Disarrange(commands::DisarrangeArgs),
    /// Undo a disarrangement using its record.
    Restore(commands::RestoreArgs),
    /// Write a pretext dataset of (disarranged, original) pairs.
    GenDataset(ExpArgs),
    /// Adversarial restoration pretraining.
    Pretrain(commands::PretrainArgs),
    /// Segmentation fine-tuning from a checkpoint or from scratch.
    Finetune(commands::FinetuneArgs),
    /// Difficulty sweep over subcube side n and layer count m.
    Sweep(commands::SweepArgs),
    /// Restoration MSE of a checkpoint, the oracle or the identity.
    Eval(commands::EvalArgs),
    /// Paired t-test between two score lists.
    Compare(commands::CompareArgs),
    /// Scratch versus pretrained fine-tuning over several seeds.
    Transfer(commands::TransferArgs),
    /// Summarize a volume or a disarrangement record.
    Inspect(commands::InspectArgs),
    /// Print the effective config as TOML.
    PrintConfig(ExpArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<rubikpp::Error>() {
            return if e.is_io() { 3 } else { 4 };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    4
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
