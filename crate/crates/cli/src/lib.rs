//! Command-line front end for the `mwradar` detector: configuration
//! loading, single-record inspection, sweeps and theoretical curves.

pub mod commands;
pub mod config;
pub mod error;
pub mod samples;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{execute, worker_count};
pub use config::{ConfigDocument, Preset};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "mwradar",
    version,
    about = "Misspecified Wald detection in AR(1) clutter"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize one record and write it as a sample file.
    Simulate(SimulateArgs),
    /// Fit the misspecified model to a record and print the estimate.
    Estimate(RecordArgs),
    /// Run the detector on one record and print a key=value report.
    Detect(RecordArgs),
    /// Monte Carlo sweep over the campaign grid.
    Sweep(SweepArgs),
    /// Asymptotic detection probability per grid point, no trials.
    Theory(TheoryArgs),
    /// Combine partial tallies written by `sweep --shard`.
    Merge(MergeArgs),
    /// Print the effective configuration after presets and flags.
    Config(TheoryArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Configuration file (TOML).
    #[arg(value_name = "CONFIG")]
    pub config_file: Option<PathBuf>,
    /// Configuration file, as an alternative to the positional argument.
    #[arg(long, conflicts_with = "config_file")]
    pub config: Option<PathBuf>,
    /// Level and trial-count preset; explicit flags take precedence.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Nominal false-alarm probability.
    #[arg(long)]
    pub pfa: Option<f64>,
    /// Base seed (campaigns) or record seed (single records).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials_h0: Option<u64>,
    #[arg(long)]
    pub trials_h1: Option<u64>,
    /// Output path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HypothesisArg {
    H0,
    H1,
}

impl From<HypothesisArg> for mwradar::Hypothesis {
    fn from(h: HypothesisArg) -> Self {
        match h {
            HypothesisArg::H0 => mwradar::Hypothesis::H0,
            HypothesisArg::H1 => mwradar::Hypothesis::H1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Pfa,
    Pd,
}

impl From<ModeArg> for mwradar::SweepMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pfa => mwradar::SweepMode::Pfa,
            ModeArg::Pd => mwradar::SweepMode::Pd,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long, value_enum, default_value = "h0")]
    pub hypothesis: HypothesisArg,
    /// Overrides `single.antennas`.
    #[arg(long)]
    pub antennas: Option<usize>,
    /// Overrides `single.rho_abs`.
    #[arg(long)]
    pub rho_abs: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct RecordArgs {
    #[command(flatten)]
    pub simulate: SimulateArgs,
    /// Sample file to process. Without it a record is synthesized from the
    /// configuration, `--hypothesis` and `--seed`.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Run only trials `i` with `i % K == k` and write a JSON tally.
    #[arg(long, value_name = "k/K")]
    pub shard: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TheoryArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MergeArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Tally files from `sweep --shard`.
    #[arg(long = "tally", required = true)]
    pub tallies: Vec<PathBuf>,
}
