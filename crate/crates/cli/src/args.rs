use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use scawb_core::metrics::{DEFAULT_STRIDE, DEFAULT_TOP_N};
use scawb_core::Channel;

#[derive(Debug, Parser)]
#[command(
    name = "scawb",
    version,
    about = "Power and impedance side-channel workbench for AES-128"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a trace set and write it as an SCTR file plus a manifest
    Generate(GenerateArgs),
    /// Recover the key from one trace file
    Attack(AttackArgs),
    /// Score a power and an impedance file on the same plaintexts side by side
    Compare(CompareArgs),
    /// Write clean and LFSR-noisy trace files for both channels
    NoiseDemo(NoiseDemoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChannelArg {
    Power,
    Impedance,
}

impl From<ChannelArg> for Channel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Power => Channel::Power,
            ChannelArg::Impedance => Channel::Impedance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl std::fmt::Display for Switch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Switch::On => "on",
            Switch::Off => "off",
        })
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub channel: Option<ChannelArg>,
    /// AES-128 key as 32 hex digits
    #[arg(long)]
    pub key: Option<String>,
    /// Number of traces M (default 1000)
    #[arg(long)]
    pub traces: Option<usize>,
    /// RNG seed; falls back to $SCAWB_SEED, then 0
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-measurement noise standard deviation before averaging
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Measurements averaged per trace
    #[arg(long)]
    pub reps: Option<u32>,
    /// Background LFSR activity
    #[arg(long, value_enum)]
    pub lfsr: Option<Switch>,
    /// Samples per trace (default: instrument record length)
    #[arg(long)]
    pub samples: Option<usize>,
    /// Leave the true key out of the file
    #[arg(long)]
    pub no_true_key: bool,
    /// key=value settings file; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output trace file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalysisArgs {
    /// Trace-count step between MTD checkpoints
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    pub stride: usize,
    /// Number of top peaks fed to the IQR rule
    #[arg(long, default_value_t = DEFAULT_TOP_N)]
    pub top_n: usize,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// SCTR trace file
    pub file: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Skip the per-position correlation surfaces
    #[arg(long)]
    pub no_surfaces: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Power-channel SCTR file
    pub power: PathBuf,
    /// Impedance-channel SCTR file
    pub impedance: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
}

#[derive(Debug, Args)]
pub struct NoiseDemoArgs {
    /// AES-128 key as 32 hex digits
    #[arg(long)]
    pub key: String,
    #[arg(long)]
    pub traces: Option<usize>,
    /// RNG seed; falls back to $SCAWB_SEED, then 0
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_generate_flags() {
        let cli = Cli::try_parse_from([
            "scawb",
            "generate",
            "--channel",
            "impedance",
            "--key",
            "00",
            "--traces",
            "10",
            "--lfsr",
            "on",
            "--out",
            "x",
        ])
        .unwrap();
        let Command::Generate(g) = cli.command else {
            panic!("wrong subcommand")
        };
        assert_eq!(g.channel, Some(ChannelArg::Impedance));
        assert_eq!(g.lfsr, Some(Switch::On));
        assert_eq!(g.traces, Some(10));
        assert!(Cli::try_parse_from(["scawb", "generate", "--channel", "acoustic"]).is_err());
    }

    #[test]
    fn analysis_defaults() {
        let cli = Cli::try_parse_from(["scawb", "attack", "f.sctr", "--out", "d"]).unwrap();
        let Command::Attack(a) = cli.command else {
            panic!("wrong subcommand")
        };
        assert_eq!(a.analysis.stride, DEFAULT_STRIDE);
        assert_eq!(a.analysis.top_n, DEFAULT_TOP_N);
        assert!(!a.no_surfaces);
    }
}
