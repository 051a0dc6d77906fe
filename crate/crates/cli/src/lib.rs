//! Pipeline driver behind the `inav` binary.
//!
//! Subcommands: `simulate` (synthetic dataset to CSV), `train` (checkpoint
//! plus epoch log), `predict` (trajectory CSV), `evaluate` (metrics JSON)
//! and `compare` (per-sequence ATE/RTE table for several methods). Every
//! run also writes a [`RunManifest`] next to its main artifact.
//!
//! Exit codes: 0 on success, 1 on internal failures (including a diverged
//! training run), 2 on usage or input errors.

mod commands;
mod error;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use inav_core::par::Exec;

pub use commands::{default_dataset_spec, effective_train_config, load_dataset, MethodSpec};
pub use error::CliError;
pub use manifest::{config_hash, manifest_path, write_atomic, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "inav", version, about = "Inertial navigation toolkit: simulate, train, predict, evaluate, compare")]
pub struct Cli {
    /// Run data-parallel work on the thread pool or on the calling thread.
    /// Results are identical either way.
    #[arg(long, value_enum, default_value_t = ExecArg::Parallel, global = true)]
    pub exec: ExecArg,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExecArg {
    Sequential,
    Parallel,
}

impl From<ExecArg> for Exec {
    fn from(e: ExecArg) -> Self {
        match e {
            ExecArg::Sequential => Exec::Sequential,
            ExecArg::Parallel => Exec::Parallel,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: sequence CSVs, metadata sidecars and a
    /// split manifest.
    Simulate(SimulateArgs),
    /// Train a network on the train split of a dataset directory,
    /// selecting the epoch with the lowest validation loss.
    Train(TrainArgs),
    /// Run a trained velocity network over one sequence and write the
    /// integrated trajectory.
    Predict(PredictArgs),
    /// Score a trajectory against a ground-truth sequence.
    Evaluate(EvaluateArgs),
    /// Score several methods on every sequence of a dataset directory.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Dataset specification (JSON); defaults to walking sequences with
    /// randomized subjects and mountings.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of sequences; overrides the specification.
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Resnet,
    Lstm,
    Tcn,
    Heading,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Resnet => "resnet",
            Arch::Lstm => "lstm",
            Arch::Tcn => "tcn",
            Arch::Heading => "heading",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FrameArg {
    Hacf,
    Local,
}

#[derive(Debug, Default, Args)]
pub struct TrainOverrides {
    /// Seed for initialisation, sampling and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Cap on training (and validation) batches per epoch.
    #[arg(long)]
    pub max_batches: Option<usize>,
    /// Input frame; `local` feeds raw device-frame IMU (sequence models only).
    #[arg(long, value_enum)]
    pub frame: Option<FrameArg>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub arch: Arch,
    /// Dataset directory written by `simulate` (or any directory of
    /// sequence CSVs with metadata sidecars).
    #[arg(long)]
    pub data: PathBuf,
    /// Training configuration (JSON), merged over the architecture's
    /// defaults; command-line flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch-log CSV; defaults to the checkpoint path with `.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Sequence CSV.
    #[arg(long)]
    pub seq: PathBuf,
    /// Trajectory CSV (`t,x,y`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlignArg {
    /// Compare as is.
    None,
    /// Rigidly align on the first five seconds first.
    First5s,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Estimated trajectory CSV (`t,x,y`).
    #[arg(long)]
    pub est: PathBuf,
    /// Ground-truth sequence CSV.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = AlignArg::None)]
    pub align: AlignArg,
    /// Metrics JSON.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated methods: `ndi`, `pdr` or `<arch>:<checkpoint>`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub methods: Vec<String>,
    /// Table CSV: one row per sequence, then a `mean` row.
    #[arg(long)]
    pub report: PathBuf,
    /// Which sequences to score.
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
}

/// Runs a parsed command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let exec = Exec::from(cli.exec);
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a, exec),
        Command::Train(a) => commands::train(&a, exec),
        Command::Predict(a) => commands::predict(&a, exec),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Compare(a) => commands::compare(&a, exec),
    }
}

/// Parses `args`, runs the command and returns the process exit code,
/// reporting any error on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
