use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "hoi-fusion", version, about = "Dual-branch diffusion fusion for personalized HOI generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full two-stage fused generation.
    Generate(GenerateArgs),
    /// Run only the layout pass and write the head mask.
    #[command(name = "stage1-mask")]
    Stage1Mask(Stage1Args),
    /// Score a directory of images with scorer adapters.
    Evaluate(EvaluateArgs),
    /// Sweep toggles, filter modes, kernel schedules or injection steps.
    Ablate(AblateArgs),
    /// Print the benchmark prompt lists.
    Corpus(CorpusArgs),
    /// Tile a directory of images into one image.
    Grid(GridArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlphaMode {
    Constant,
    Decremental,
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SegmentorKind {
    /// Luminance threshold stand-in for a head segmentor.
    Luminance,
    /// Never finds a head (forces the mask fallback).
    Null,
}

#[derive(Debug, Clone, Args)]
pub struct StackArgs {
    /// Text prompt.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Seed for the shared initial noise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of denoising steps T.
    #[arg(long)]
    pub steps: Option<usize>,
    /// SD-branch backend, e.g. `toy:seed=1`.
    #[arg(long)]
    pub backend_sd: Option<String>,
    /// PFD-branch backend, e.g. `toy:seed=2`.
    #[arg(long)]
    pub backend_pfd: Option<String>,
    /// Class word in the prompt that carries the identity token.
    #[arg(long)]
    pub class_word: Option<String>,
    /// Identity descriptor standing in for the reference image.
    #[arg(long, default_value = "subject-0")]
    pub subject: String,
    /// User-supplied head mask (8-bit grayscale PNG); skips segmentation.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Mask used only when the segmentor finds no head.
    #[arg(long, conflicts_with = "mask")]
    pub mask_fallback: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SegmentorKind::Luminance)]
    pub segmentor: SegmentorKind,
    #[arg(long, default_value_t = 0.6)]
    pub segmentor_threshold: f64,
    /// JSON config file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Embed a wall-clock timestamp in manifests.
    #[arg(long)]
    pub timestamps: bool,
}

#[derive(Debug, Clone, Args)]
pub struct MergeArgs {
    /// Residual-merge filter mode (replace, no-filter, low-low, high-high, high-low, low-high).
    #[arg(long)]
    pub filter_mode: Option<String>,
    #[arg(long)]
    pub alpha_start: Option<f64>,
    #[arg(long)]
    pub alpha_end: Option<f64>,
    #[arg(long, value_enum)]
    pub alpha_mode: Option<AlphaMode>,
    /// Steps completed before the identity token activates.
    #[arg(long)]
    pub inject_step: Option<usize>,
    #[arg(long)]
    pub no_cac: bool,
    #[arg(long)]
    pub no_lm: bool,
    #[arg(long)]
    pub no_rm: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub stack: StackArgs,
    #[command(flatten)]
    pub merge: MergeArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Write per-step latents, noise and residuals as array containers.
    #[arg(long)]
    pub dump_intermediates: bool,
    /// Replay a manifest and verify its checksums.
    #[arg(long, conflicts_with_all = ["prompt", "seed", "steps", "config"])]
    pub from_manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Stage1Args {
    #[command(flatten)]
    pub stack: StackArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of PNG images (sorted by file name).
    #[arg(long)]
    pub images: PathBuf,
    /// Metrics to compute; repeat or comma-separate.
    #[arg(long, value_delimiter = ',', required = true)]
    pub mode: Vec<String>,
    /// Adapter-spec JSON; defaults to $PERSONAHOI_ADAPTERS.
    #[arg(long)]
    pub adapters: Option<PathBuf>,
    /// Reference image for the identity metric.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// One prompt per line, aligned with the sorted images.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// One `subject<TAB>verb<TAB>object` per line, aligned with the sorted images.
    #[arg(long)]
    pub triplets: Option<PathBuf>,
    /// Use the HOI corpus for this subject as prompts and triplets.
    #[arg(long, conflicts_with_all = ["prompts", "triplets"])]
    pub corpus_subject: Option<String>,
    #[arg(long, default_value = "method")]
    pub method: String,
    /// Write the JSON report here (the table always goes to stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub stack: StackArgs,
    #[command(flatten)]
    pub merge: MergeArgs,
    /// `all` or a comma-separated list of filter modes.
    #[arg(long)]
    pub filter_modes: Option<String>,
    /// `grid` (full, minus-LM, minus-RM, minus-CAC, baseline) or `on-off`.
    #[arg(long)]
    pub toggles: Option<String>,
    /// Comma-separated schedules: `2.5->0.5` (linear) or `1.5` (constant).
    #[arg(long)]
    pub alphas: Option<String>,
    /// Comma-separated injection steps.
    #[arg(long, value_delimiter = ',')]
    pub inject_steps: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorpusSet {
    Hoi,
    General,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub subject: String,
    #[arg(long, value_enum)]
    pub set: CorpusSet,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub cols: usize,
    #[arg(long)]
    pub out: PathBuf,
}
