use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use meltstream_core::harness::Setting;
use meltstream_core::models::ModelKind;

#[derive(Debug, Parser)]
#[command(name = "meltstream", version, about = "Melt-pool image-stream classification pipelines")]
pub struct Cli {
    /// Default root for datasets and results.
    #[arg(long, env = "MELTSTREAM_DATA", global = true)]
    pub data: Option<PathBuf>,

    /// Raise log verbosity (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic four-class dataset.
    Synth(SynthArgs),
    /// Derive the 39 augmented variants of every video in a manifest.
    Augment(AugmentArgs),
    /// Train and test a model under one of the three settings.
    Train(TrainArgs),
    /// Dump the stacked optical flow of one clip.
    Flow(FlowArgs),
    /// Score a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Collect every run under a results directory into one CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory [default: $MELTSTREAM_DATA/original].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training videos per class.
    #[arg(long, default_value_t = 3)]
    pub videos_per_class: usize,
    /// Validation videos per class.
    #[arg(long, default_value_t = 1)]
    pub val_per_class: usize,
    /// Frames per video.
    #[arg(long, default_value_t = 284)]
    pub frames: usize,
    #[arg(long, default_value_t = 140)]
    pub height: usize,
    #[arg(long, default_value_t = 200)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// 3,283 training and 1,136 validation frames with the irregular lengths of the recordings;
    /// overrides the per-class counts and --frames.
    #[arg(long)]
    pub full_size: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Source manifest [default: $MELTSTREAM_DATA/original/manifest.json].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory [default: $MELTSTREAM_DATA/augmented].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_model)]
    pub model: ModelKind,
    #[arg(long)]
    pub setting: Setting,
    /// [default: $MELTSTREAM_DATA/original/manifest.json]
    #[arg(long)]
    pub manifest_org: Option<PathBuf>,
    /// [default: $MELTSTREAM_DATA/augmented/manifest.json]
    #[arg(long)]
    pub manifest_aug: Option<PathBuf>,
    /// First repeat seed; repeat i uses seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Independent runs to average [default: 10 for slowfast, else 1].
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Width multiplier applied to every channel count [default: 1].
    #[arg(long)]
    pub width: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Frames per clip [default: 10].
    #[arg(long)]
    pub clip_len: Option<usize>,
    /// Stop once an epoch reaches this training accuracy.
    #[arg(long)]
    pub stop_at_train_acc: Option<f64>,
    /// Stop once validation accuracy reaches this value.
    #[arg(long)]
    pub stop_at_val_acc: Option<f64>,
    /// JSON file of settings; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Omit wall-clock times so reruns write identical records.
    #[arg(long)]
    pub deterministic: bool,
    /// Results directory [default: $MELTSTREAM_DATA/runs].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    /// MPV1 clip `[S,C,H,W]`.
    #[arg(long)]
    pub clip: PathBuf,
    /// Output MPV1 file holding S−1 two-channel f32 frames.
    #[arg(long)]
    pub out: PathBuf,
    /// Smoothness weight in grey levels.
    #[arg(long, default_value_t = 10.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// MSCK checkpoint; its model config is read from the `.json` beside it.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    pub split: SplitArg,
    /// Seed for the dual-rate sampler's window draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Also write the result as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `train` [default: $MELTSTREAM_DATA/runs].
    #[arg(long)]
    pub runs_dir: Option<PathBuf>,
    /// One row per plan (mean and spread over its repeats) instead of per run.
    #[arg(long)]
    pub aggregate: bool,
    /// CSV destination [default: <runs-dir>/report.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).map_err(|e| e.to_string())
}
