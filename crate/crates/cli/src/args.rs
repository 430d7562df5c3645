use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "palmpipe", version, about = "Tactile tilt/position rendering pipeline for a three-contact palm display")]
pub struct Cli {
    /// Settings file of `key = value` lines; flags given on the command line win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic labeled sensor dataset.
    Gen(GenArgs),
    /// Train the two-head classifier (50/25/25 split) and write a checkpoint.
    Train(TrainArgs),
    /// Run the 60 Hz pipeline against the simulated 120 Hz sensor.
    Run(RunArgs),
    /// Machine-observer study comparing direct and masked rendering.
    Study(StudyArgs),
    /// Per-stage tick latency in both modes.
    Bench(BenchArgs),
    /// Serve the sandbox UI and its WebSocket tick stream.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output dataset file.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Repetitions per (pattern, grip step) [default: 36].
    #[arg(long)]
    pub n_reps: Option<usize>,
    /// RNG seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-cell sensor noise sigma, N [default: 0.15].
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file written by `gen`.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long, value_name = "CKPT")]
    pub out: PathBuf,
    /// Per-epoch history CSV [default: <out>.history.csv].
    #[arg(long, value_name = "PATH")]
    pub history: Option<PathBuf>,
    /// Training epochs [default: 50].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed for the split, initialization and shuffling [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mini-batch size [default: 64].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate [default: 0.01].
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Direct,
    Masked,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Rendering mode; `masked` needs --ckpt.
    #[arg(long, value_enum, default_value = "direct")]
    pub mode: ModeArg,
    /// Trained checkpoint.
    #[arg(long, value_name = "CKPT")]
    pub ckpt: Option<PathBuf>,
    /// Run length in seconds [default: 10].
    #[arg(long)]
    pub duration: Option<f64>,
    /// Per-tick snapshot log (CSV).
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
    /// Sensor noise seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-cell sensor noise sigma, N [default: 0.15].
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Trained checkpoint (drives masked mode).
    #[arg(long, value_name = "CKPT")]
    pub ckpt: PathBuf,
    /// Trials per pattern [default: 500].
    #[arg(long)]
    pub trials: Option<usize>,
    /// Per-cell sensor noise sigma, N [default: 0.15].
    #[arg(long)]
    pub noise: Option<f64>,
    /// RNG seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the report here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Ticks per mode [default: 3000].
    #[arg(long)]
    pub ticks: Option<usize>,
    /// Trained checkpoint; without one, masked mode uses an untrained network
    /// of the default architecture (same cost).
    #[arg(long, value_name = "CKPT")]
    pub ckpt: Option<PathBuf>,
    /// Frame noise seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TCP port [default: 8080].
    #[arg(long)]
    pub port: Option<u16>,
    /// Interface to bind.
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Trained checkpoint; without one only direct mode is available.
    #[arg(long, value_name = "CKPT")]
    pub ckpt: Option<PathBuf>,
    /// Directory of static UI assets served at `/`.
    #[arg(long, value_name = "DIR", default_value = "sandbox_ui/dist")]
    pub assets: PathBuf,
    /// Sensor noise seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-cell sensor noise sigma, N [default: 0.15].
    #[arg(long)]
    pub noise: Option<f64>,
}
