//! `dffcn`: phantom generation, training, inference, localization,
//! evaluation and the gap sweep.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "dffcn", version, about = "Direction-fused FCN catheter segmentation for 3D ultrasound")]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a phantom dataset with a fold manifest.
    Gen(GenArgs),
    /// Train on every fold except the held-out one.
    Train(TrainArgs),
    /// Predict a probability volume and a thresholded mask.
    Predict(PredictArgs),
    /// Fit a catheter spline to a binary mask.
    Localize(LocalizeArgs),
    /// Score predicted masks and catheter models against a dataset.
    Eval(EvalArgs),
    /// Cross-validated Dice for every gap d and mode.
    #[command(name = "sweep-d")]
    SweepD(SweepArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Df,
    SingleAxis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    X,
    Y,
    Z,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of volumes [default: 25]
    #[arg(long)]
    pub n: Option<usize>,
    /// Base seed [default: config seed, 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of folds [default: 3]
    #[arg(long)]
    pub folds: Option<usize>,
    /// Cubic volume side in voxels [default: 64]
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    /// Slice gap d in 0..=5 [default: 3]
    #[arg(long)]
    pub d: Option<usize>,
    /// Network profile: tiny or full [default: tiny]
    #[arg(long)]
    pub profile: Option<String>,
    /// Epochs [default: 1]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Optimizer steps per epoch [default: one pass over the sample pool]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Training patch side [default: 48]
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Patches per optimizer step [default: 1]
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory or its manifest.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out fold [default: 0]
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    /// Loss mode [default: df]
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Slicing axis for single-axis mode [default: drawn from the seed]
    #[arg(long, value_enum)]
    pub axis: Option<AxisArg>,
    /// Root seed [default: config seed, 0]
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Output weights; writes <out>.json, <out>.bin and <out>_loss.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Trained weights.
    #[arg(long)]
    pub weights: PathBuf,
    /// Input volume.
    #[arg(long)]
    pub volume: PathBuf,
    /// Prediction mode [default: df]
    #[arg(long, value_enum, default_value = "df")]
    pub mode: ModeArg,
    /// Slicing axis for single-axis mode.
    #[arg(long, value_enum)]
    pub axis: Option<AxisArg>,
    /// Seed that draws the single-axis direction when --axis is absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Slice gap d [default: the gap the weights were trained with]
    #[arg(long)]
    pub d: Option<usize>,
    /// Core size N of each inference patch [default: 32]
    #[arg(long)]
    pub n: Option<usize>,
    /// Context size M of each inference patch [default: 48]
    #[arg(long)]
    pub m: Option<usize>,
    /// Probability threshold for the mask [default: 0.5]
    #[arg(long)]
    pub threshold: Option<f32>,
    /// Output stem; writes <out>_prob and <out>_mask volumes.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct LocalizeArgs {
    /// Binary segmentation mask.
    #[arg(long)]
    pub mask: PathBuf,
    /// RANSAC iterations [default: 500]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Inlier distance in voxels [default: 3]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// RANSAC seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output catheter model JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset directory or its manifest.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory with <name>_mask volumes and <name>_model.json files.
    #[arg(long)]
    pub pred: PathBuf,
    /// Only evaluate this fold [default: every member]
    #[arg(long)]
    pub fold: Option<usize>,
    /// Output JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Dataset directory or its manifest.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Gap values [default: 0,1,2,3,4,5]
    #[arg(long = "d-values", value_delimiter = ',', default_value = "0,1,2,3,4,5")]
    pub d_values: Vec<usize>,
    /// Modes [default: df,single-axis]
    #[arg(long, value_enum, value_delimiter = ',', default_value = "df,single-axis")]
    pub modes: Vec<ModeArg>,
    /// Training seeds [default: config seed, 0]
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Core size N of each inference patch [default: 32]
    #[arg(long)]
    pub n: Option<usize>,
    /// Context size M of each inference patch [default: 48]
    #[arg(long)]
    pub m: Option<usize>,
    /// Output CSV (mode,d,seed,dice).
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("error: invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
