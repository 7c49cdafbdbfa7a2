//! `flattenkit`: flatten video clips into composite images, synthesize
//! motion datasets, train/evaluate the reference classifier, and run the
//! transform ablation.
//!
//! Exit codes: 0 success, 2 usage or contract violation, 3 IO failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "flattenkit",
    version,
    about = "Model video time in the image plane"
)]
struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Cap on worker threads for parallel sections.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Flatten a clip (frame directory or tensor file) into one composite.
    Flatten(FlattenArgs),
    /// Invert a composite back into its frame sequence.
    Unflatten(UnflattenArgs),
    /// Cut a source into its AxBxCxD evaluation views.
    Sample(SampleArgs),
    /// Generate the synthetic motion dataset.
    Synth(SynthArgs),
    /// Train the classifier on flattened composites.
    Train(TrainArgs),
    /// Evaluate a checkpoint with multi-view aggregation.
    Eval(EvalArgs),
    /// Train row-major / nested / random under one budget and compare.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    #[value(name = "row-major")]
    RowMajor,
    Nested,
    Random,
}

/// Flatten-plan flags shared by several subcommands.
#[derive(Debug, Args)]
struct PlanArgs {
    /// Transform kind (default: row-major).
    #[arg(long, value_enum)]
    kind: Option<KindArg>,

    /// Explicit RxC block grid (default: the square grid for the frame count).
    #[arg(long)]
    grid: Option<String>,

    /// Sub-sequence count for the nested kind (default: sqrt of the frame
    /// count when that is a fourth power).
    #[arg(long)]
    nested_n: Option<usize>,

    /// Seed for the random kind (default: config file, then
    /// FLATTENKIT_SEED, then 1).
    #[arg(long)]
    seed: Option<u64>,

    /// Fill blocks column-first instead of row-first.
    #[arg(long)]
    transpose: bool,
}

#[derive(Debug, Args)]
struct FlattenArgs {
    /// Frame directory or 4-dim tensor file.
    #[arg(long)]
    input: PathBuf,

    /// Uniformly sample this many frames from the source first.
    #[arg(long)]
    frames: Option<usize>,

    /// Frame-file pattern for directory inputs.
    #[arg(long, default_value = flattenkit::ingest::DEFAULT_FRAME_PATTERN)]
    pattern: String,

    #[command(flatten)]
    plan: PlanArgs,

    /// Composite tensor file to write.
    #[arg(long)]
    output: Option<PathBuf>,

    /// Composite PNG to write.
    #[arg(long)]
    png: Option<PathBuf>,

    /// PNG normalization.
    #[arg(long, value_enum, default_value = "clip01")]
    normalize: NormalizeArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormalizeArg {
    Clip01,
    Minmax,
}

#[derive(Debug, Args)]
struct UnflattenArgs {
    /// Composite tensor file.
    #[arg(long)]
    input: PathBuf,

    /// Frame count of the original clip (used to derive the square grid
    /// when --grid is not given).
    #[arg(long)]
    frames: Option<usize>,

    #[command(flatten)]
    plan: PlanArgs,

    /// Output: a `.fltn` path for a clip tensor, anything else is treated
    /// as a directory of PNG frames.
    #[arg(long)]
    output: PathBuf,

    /// Frame-file pattern for directory outputs.
    #[arg(long, default_value = flattenkit::ingest::DEFAULT_FRAME_PATTERN)]
    pattern: String,

    #[arg(long, value_enum, default_value = "clip01")]
    normalize: NormalizeArg,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Frame directory or 4-dim tensor file.
    #[arg(long)]
    input: PathBuf,

    /// View recipe AxBxCxD.
    #[arg(long)]
    views: Option<String>,

    /// Directory for the sampled view tensors.
    #[arg(long)]
    output: PathBuf,

    #[arg(long, default_value = flattenkit::ingest::DEFAULT_FRAME_PATTERN)]
    pattern: String,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory for clips, manifests, and the sidecar.
    #[arg(long)]
    out: PathBuf,

    /// How many of the 8 default motion classes to use.
    #[arg(long, default_value_t = 8)]
    classes: usize,

    /// Training clips per class.
    #[arg(long, default_value_t = 64)]
    train: usize,

    /// Validation clips per class.
    #[arg(long, default_value_t = 16)]
    val: usize,

    #[arg(long)]
    seed: Option<u64>,

    /// Canvas side in pixels.
    #[arg(long, default_value_t = 32)]
    canvas: usize,

    /// Frames per clip.
    #[arg(long, default_value_t = 16)]
    frames: usize,

    /// Gaussian noise scale.
    #[arg(long, default_value_t = 0.05)]
    sigma: f32,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory containing train.csv and val.csv.
    #[arg(long)]
    data: Option<PathBuf>,

    /// Explicit manifests (override --data).
    #[arg(long)]
    train_manifest: Option<PathBuf>,
    #[arg(long)]
    val_manifest: Option<PathBuf>,

    /// Output directory for history.csv, the best checkpoint, and the
    /// resolved config.
    #[arg(long)]
    out: PathBuf,

    #[command(flatten)]
    plan: PlanArgs,

    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f32>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint directory (as written by `train`).
    #[arg(long)]
    checkpoint: PathBuf,

    /// Manifest of clips to evaluate.
    #[arg(long)]
    manifest: PathBuf,

    /// View recipe AxBxCxD.
    #[arg(long)]
    views: Option<String>,

    #[command(flatten)]
    plan: PlanArgs,

    /// Optional directory for metrics.csv and the confusion matrix.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Dataset directory containing train.csv and val.csv.
    #[arg(long)]
    data: Option<PathBuf>,

    #[arg(long)]
    train_manifest: Option<PathBuf>,
    #[arg(long)]
    val_manifest: Option<PathBuf>,

    /// Output directory for ablation.csv, gaps.csv, runs.csv.
    #[arg(long)]
    out: PathBuf,

    /// Comma-separated training seeds.
    #[arg(long, default_value = "1,2,3", value_delimiter = ',')]
    seeds: Vec<u64>,

    #[arg(long)]
    nested_n: Option<usize>,

    #[arg(long, default_value_t = 24)]
    epochs: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

/// CLI failure classified for the exit code.
#[derive(Debug)]
enum CliError {
    /// Contract or usage violation (exit 2).
    Usage(String),
    /// Filesystem or decoding failure (exit 3).
    Io(String),
}

impl From<flattenkit::Error> for CliError {
    fn from(e: flattenkit::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match RunConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    if let Some(workers) = cli.workers.or(config.workers) {
        // Ignore the error if a pool already exists (e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    let result = match cli.command {
        Command::Flatten(args) => commands::flatten(args, &config),
        Command::Unflatten(args) => commands::unflatten(args, &config),
        Command::Sample(args) => commands::sample(args, &config),
        Command::Synth(args) => commands::synth(args, &config),
        Command::Train(args) => commands::train(args, &config),
        Command::Eval(args) => commands::eval(args, &config),
        Command::Ablate(args) => commands::ablate(args, &config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
