//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and returns the process exit status: 0 on success, 1 on an
//! operational failure, 2 on a usage or configuration error.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::detector::{KeypointBudget, TargetKind};
use crate::error::Error;

pub use commands::{
    cmd_evaluate, cmd_heatmap, cmd_register, cmd_synth, cmd_train_descriptor, cmd_train_detector,
    evaluate_record, Models, RESOLVED_CONFIG,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "unconked",
    version,
    about = "Unsupervised keypoints and descriptors for retinal image registration"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the dense descriptor network.
    TrainDescriptor(TrainDescriptorArgs),
    /// Train a detector on AP or SS maps of a frozen descriptor.
    TrainDetector(TrainDetectorArgs),
    /// Register one image pair.
    Register(RegisterArgs),
    /// Register and score every pair of a manifest.
    Evaluate(EvaluateArgs),
    /// Generate synthetic evaluation pairs and manifests.
    SynthPairs(SynthArgs),
    /// Dump predicted or target heatmaps of one image.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainDescriptorArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `data.images`.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainDetectorArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Descriptor checkpoint the targets are computed with.
    #[arg(long)]
    pub descriptor: PathBuf,
    /// `ap` or `ss`; overrides `detector.target`.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub print_config: bool,
}

/// Model and keypoint options shared by inference commands.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub descriptor: PathBuf,
    /// Detector checkpoint; give an AP and an SS checkpoint to combine them.
    #[arg(long = "detector")]
    pub detectors: Vec<PathBuf>,
    /// Use the D2-style score on the descriptor field instead of a detector.
    #[arg(long, conflicts_with = "detectors")]
    pub d2: bool,
    /// Keypoints per image: a positive integer or `all`.
    #[arg(long)]
    pub k: Option<KeypointBudget>,
    /// Keep only the `m` closest matches.
    #[arg(long)]
    pub m: Option<usize>,
    /// Inference side length.
    #[arg(long)]
    pub size: Option<usize>,
    /// Lowe ratio test threshold.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// RANSAC seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub fixed: PathBuf,
    #[arg(long)]
    pub moving: PathBuf,
    /// RoI mask of the fixed image.
    #[arg(long)]
    pub fixed_mask: Option<PathBuf>,
    #[arg(long)]
    pub moving_mask: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Report path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// JSON-lines pair manifest.
    #[arg(long)]
    pub pairs: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for SVG charts.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Source images; omit to render procedural fundus images.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Number of procedural images when `--images` is absent; they are
    /// also written to `<out>/sources` with RoI masks in `<out>/sources_roi`.
    #[arg(long, default_value_t = 10)]
    pub generate: usize,
    /// Side length of procedural images.
    #[arg(long, default_value_t = 565)]
    pub generate_size: usize,
    /// `color`, `geometric`, `full` or `all`.
    #[arg(long, default_value = "all")]
    pub mode: String,
    #[arg(long, default_value_t = 1)]
    pub per_image: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// `predicted`, `combined`, `ap`, `ss` or `d2`.
    #[arg(long, default_value = "predicted")]
    pub kind: String,
    /// Target kind for `predicted` is read from the checkpoint.
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

pub(crate) fn parse_target(s: &str) -> crate::Result<TargetKind> {
    s.parse()
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let res = match cli.command {
        Command::TrainDescriptor(a) => cmd_train_descriptor(&a),
        Command::TrainDetector(a) => cmd_train_detector(&a),
        Command::Register(a) => cmd_register(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::SynthPairs(a) => cmd_synth(&a),
        Command::Heatmap(a) => cmd_heatmap(&a),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
