//! `roadlaw`: audit recorded traffic, simulate scenarios with the compliance
//! stack and compare both over a directory of recordings.

mod commands;
mod units;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "roadlaw", version, about = "Traffic-law compliance monitoring and control for highway driving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Label the recorded trajectories of track files without intervening.
    Audit {
        /// Track CSV files; each needs a `.meta.json` sidecar.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run one scenario in closed loop and write the frame log and plot series.
    Simulate {
        /// Scenario file (JSON).
        #[arg(conflicts_with = "builtin", required_unless_present = "builtin")]
        scenario: Option<PathBuf>,
        /// Use a bundled scenario instead of a file.
        #[arg(long, value_parser = commands::BUILTINS)]
        builtin: Option<String>,
        /// Replay the initial reference with the stack switched off.
        #[arg(long)]
        disable_compliance: bool,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Audit, then drive every ego run with the stack, for all track files in a directory.
    Batch {
        dir: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write a suite of synthetic congested recordings.
    GenSynthetic {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        files: usize,
        /// Output directory.
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Format of the per-frame outputs.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Controller and sampling step (s).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Prediction horizon in steps.
    #[arg(long)]
    pub np: Option<usize>,
    /// Control horizon in steps.
    #[arg(long)]
    pub nc: Option<usize>,
    /// JSON object of threshold overrides, e.g. {"dv_ot": "54 km/h"}.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Single threshold override, e.g. --set dv_ot=15m/s. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Longitudinal stretch applied to the recordings.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Which vehicles become egos: all, leftmost, or a lane index (0 = right-most).
    #[arg(long, default_value = "all")]
    pub lanes: String,
    /// Tracks shorter than this are skipped (s).
    #[arg(long, default_value_t = 2.0)]
    pub min_duration: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Audit { files, data, common } => commands::audit(&files, &data, &common),
        Command::Simulate { scenario, builtin, disable_compliance, seed, common } => {
            commands::simulate(scenario.as_deref(), builtin.as_deref(), disable_compliance, seed, &common)
        }
        Command::Batch { dir, data, common } => commands::batch(&dir, &data, &common),
        Command::GenSynthetic { seed, files, out } => commands::gen_synthetic(seed, files, &out),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
