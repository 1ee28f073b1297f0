use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nucprune::synth::SceneDistribution;

use crate::data::Split;
use crate::model::{BranchArg, MethodArg};

/// Train, prune and evaluate the toy nucleus segmentation model on
/// synthetic scenes.
#[derive(Debug, Parser)]
#[command(name = "nucprune", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes with ground truth.
    Synth(SynthArgs),
    /// Train the segmentation or regression branch.
    Train(TrainArgs),
    /// Iteratively prune and retrain a trained model up to a compression ratio.
    PruneSweep(SweepArgs),
    /// Run a model on one image and write its output map.
    Predict(PredictArgs),
    /// Merge a segmentation and a distance map into instance labels.
    Merge(MergeArgs),
    /// Score a predicted label map against ground truth.
    Eval(EvalArgs),
    /// Evaluate every sweep checkpoint on a scene set and write the results CSV.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistArg {
    Base,
    Shifted,
}

impl From<DistArg> for SceneDistribution {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Base => SceneDistribution::Base,
            DistArg::Shifted => SceneDistribution::Shifted,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub count: usize,
    /// Side length in pixels; a multiple of 4.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, value_enum, default_value_t = DistArg::Base)]
    pub dist: DistArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of scenes assigned to the training split.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub branch: BranchArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Split::Train)]
    pub split: Split,
    /// Disable random horizontal/vertical flips.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Final compression ratio; a power of two.
    #[arg(long, default_value_t = 8)]
    pub max_cr: u64,
    #[arg(long, default_value_t = 150)]
    pub retrain_epochs: usize,
    #[arg(long)]
    pub data: PathBuf,
    /// Sweep root; checkpoints go to `<out>/<branch>/<method>/`.
    #[arg(long)]
    pub out: PathBuf,
    /// Required when the model has no `.meta.json` sidecar.
    #[arg(long, value_enum)]
    pub branch: Option<BranchArg>,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Split::Train)]
    pub split: Split,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub branch: Option<BranchArg>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Foreground probability map (PFM).
    #[arg(long)]
    pub seg: PathBuf,
    /// Predicted distance map (PFM).
    #[arg(long)]
    pub dist: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub min_area: usize,
    #[arg(long, default_value_t = 0.5)]
    pub sigma_scale: f64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "eval")]
    pub run_id: String,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub sweep: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Defaults to the sweep directory's name.
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long)]
    pub force: bool,
}
