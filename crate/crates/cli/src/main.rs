//! `sparseflow` command-line harness.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error, 4 failed
//! self-test check.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparseflow::dfengine::Scheme;
use sparseflow::netspec::NetworkKind;

use config::Resolution;

#[derive(Parser, Debug)]
#[command(name = "sparseflow", version, about = "Event-driven sparse FireNet simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a network over a spike file and write flow, densities and costs.
    Infer(InferArgs),
    /// Single-layer sweep over active pixels and ac./sp. per pixel.
    Controlled(CommonArgs),
    /// Cost of full-resolution FireNets driven at fixed density profiles.
    FixtureCost(CommonArgs),
    /// Train a toy network on the synthetic translating-dots task.
    Train(TrainArgs),
    /// Write a spike file, ground truth and trained toy networks.
    GenFixtures(GenArgs),
    /// Run the invariant suite.
    SelfTest(SelfTestArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Cost profile file; the built-in default profile when absent.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    profile_name: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SchemeArg {
    Aer,
    Bitmask,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Aer => Scheme::Aer,
            SchemeArg::Bitmask => Scheme::Bitmask,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Ann,
    Snn,
}

impl From<KindArg> for NetworkKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Ann => NetworkKind::Ann,
            KindArg::Snn => NetworkKind::Snn,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct InferArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Weight file.
    #[arg(long)]
    net: PathBuf,
    /// Text spike file, `t_us x y p` per line.
    #[arg(long)]
    events: PathBuf,
    /// Ground-truth flow file; enables endpoint-error output.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bitmask")]
    scheme: SchemeArg,
    /// Network input resolution; the weight file's when absent.
    #[arg(long)]
    resolution: Option<Resolution>,
    /// Sensor resolution of the spike file; equal to the input resolution
    /// when absent. Larger sensors are centre-cropped and binned.
    #[arg(long)]
    sensor: Option<Resolution>,
    /// Frame length in microseconds.
    #[arg(long, default_value_t = 10_000, conflicts_with = "frame_spikes")]
    window_us: u64,
    /// Fixed number of spikes per frame instead of time windows.
    #[arg(long)]
    frame_spikes: Option<usize>,
    /// Exactly this many windows starting at time zero, empty ones
    /// included; later spikes are ignored.
    #[arg(long, conflicts_with = "frame_spikes")]
    frames: Option<usize>,
    /// Run each core on its own thread.
    #[arg(long)]
    threads: bool,
    /// Use the 2 MiB per-core memory configuration.
    #[arg(long)]
    large_memory: bool,
    /// Write density-map and flow images.
    #[arg(long)]
    images: bool,
    /// Write every emitted ac./sp. to a CSV log.
    #[arg(long)]
    log_activations: bool,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum, default_value = "snn")]
    kind: KindArg,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value = "16x16")]
    resolution: Resolution,
    #[arg(long, default_value_t = 6)]
    frames: usize,
    #[arg(long, default_value_t = 4)]
    samples: usize,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    /// Sparsification weight; a comma-separated list trains one network each.
    #[arg(long, value_delimiter = ',', default_value = "0.001")]
    lambda_s: Vec<f64>,
    /// Per-hidden-layer weights, comma-separated; all ones when absent.
    #[arg(long, value_delimiter = ',')]
    lambda_i: Vec<f64>,
    #[arg(long, default_value_t = 0.02)]
    lr: f64,
    #[arg(long, default_value_t = 5)]
    bptt: usize,
    #[arg(long, default_value_t = 1.0)]
    surrogate_width: f64,
}

#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "16x16")]
    resolution: Resolution,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
}

#[derive(Args, Debug, Clone)]
pub struct SelfTestArgs {
    #[arg(long, default_value_t = 200)]
    instances: usize,
    #[arg(long, default_value_t = 100_000)]
    payloads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    Check(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
            Failure::Check(_) => 4,
        }
    }
}

pub fn config_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Config(e.into())
}

pub fn runtime_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Infer(a) => commands::infer(&a),
        Command::Controlled(a) => commands::controlled(&a),
        Command::FixtureCost(a) => commands::fixture_cost(&a),
        Command::Train(a) => commands::train(&a),
        Command::GenFixtures(a) => commands::gen_fixtures(&a),
        Command::SelfTest(a) => commands::self_test(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(e) => eprintln!("configuration error: {e:#}"),
                Failure::Runtime(e) => eprintln!("error: {e:#}"),
                Failure::Check(n) => eprintln!("{n} self-test check(s) failed"),
            }
            ExitCode::from(f.code())
        }
    }
}
