use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use blastoseg::models::{Architecture, EnsembleScheme};

#[derive(Debug, Parser)]
#[command(name = "blastoseg", version, about = "Blastocyst segmentation with the U-Net family")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a phantom dataset with exact masks.
    Generate(GenerateArgs),
    /// Train one network, or the three ensemble members.
    Train(TrainArgs),
    /// Score checkpoints on the test set and write reports and overlays.
    Eval(EvalArgs),
    /// Segment one image into a mask PNG.
    Segment(SegmentArgs),
    /// Micro Jaccard over thresholds 0.1 to 0.9.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Unet,
    SdUnet,
    Resunet,
    RdUnet,
    EnsembleUnweighted,
    EnsembleWeighted,
}

/// What a model name resolves to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Single(Architecture),
    Ensemble(EnsembleScheme),
}

impl ModelChoice {
    pub fn kind(self) -> ModelKind {
        match self {
            ModelChoice::Unet => ModelKind::Single(Architecture::UNet),
            ModelChoice::SdUnet => ModelKind::Single(Architecture::SdUNet),
            ModelChoice::Resunet => ModelKind::Single(Architecture::ResUNet),
            ModelChoice::RdUnet => ModelKind::Single(Architecture::RdUNet),
            ModelChoice::EnsembleUnweighted => ModelKind::Ensemble(EnsembleScheme::Unweighted),
            ModelChoice::EnsembleWeighted => ModelKind::Ensemble(EnsembleScheme::Weighted),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Unet => "unet",
            ModelChoice::SdUnet => "sd-unet",
            ModelChoice::Resunet => "resunet",
            ModelChoice::RdUnet => "rd-unet",
            ModelChoice::EnsembleUnweighted => "ensemble-unweighted",
            ModelChoice::EnsembleWeighted => "ensemble-weighted",
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output dataset directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// TOML phantom-set spec; flags override its values.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub blastocysts: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Native image size in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Gaussian noise standard deviation in gray levels.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub debris: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Share of pairs that go to the training set.
    #[arg(long, default_value_t = 0.75)]
    pub ratio: f64,
    /// Keep all frames of a blastocyst on the same side of the split.
    #[arg(long)]
    pub grouped: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory holding manifest.toml.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub model: ModelChoice,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with training settings; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 16)]
    pub base_filters: usize,
    /// Working resolution; images are resized to size×size.
    #[arg(long, default_value_t = 240)]
    pub size: usize,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub augment: Option<bool>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint file; repeat for ensemble members.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Expected model; defaults to the architecture stored in the checkpoint.
    #[arg(long, value_enum)]
    pub model: Option<ModelChoice>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Also write the threshold sweep table.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long)]
    pub no_overlays: bool,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelChoice>,
    /// Input image (any PNG, read as grayscale).
    #[arg(long)]
    pub image: PathBuf,
    /// Output mask PNG.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepSet {
    /// Validation split carved from the training set as during training.
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelChoice>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SweepSet::Val)]
    pub set: SweepSet,
    /// Validation split seed; defaults to the training seed in the checkpoint.
    #[arg(long)]
    pub seed: Option<u64>,
}
