use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "vishash", version, about = "Visual hashtag discovery for infographics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted icon glyphs.
    Synth(SynthArgs),
    /// Merge tags, filter records and split into train/test manifests.
    Curate(CurateArgs),
    /// Train a text model on mean word embeddings.
    TrainText(TrainTextArgs),
    /// Train a multiple-instance vision model on image patches.
    TrainVision(TrainVisionArgs),
    /// Rank labels for a transcript, an image, or a whole manifest.
    Predict(PredictArgs),
    /// Localize visual hashtags with a vision tag model.
    Hashtag(HashtagArgs),
    /// Score predictions and proposals against ground truth.
    Evaluate(EvaluateArgs),
    /// Chance, random-crop and non-learned text baselines.
    Baseline(BaselineArgs),
    /// Serve annotation tasks over HTTP and store collected boxes.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Head {
    Category,
    Tag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Random,
    Proposals,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub images: usize,
    #[arg(long, default_value_t = 1024)]
    pub width: u32,
    #[arg(long, default_value_t = 1536)]
    pub height: u32,
    #[arg(long, default_value_t = 6)]
    pub categories: usize,
    #[arg(long, default_value_t = 20)]
    pub tags: usize,
    #[arg(long, default_value_t = 1)]
    pub icons_min: usize,
    #[arg(long, default_value_t = 4)]
    pub icons_max: usize,
    #[arg(long, default_value_t = 1)]
    pub tags_min: usize,
    #[arg(long, default_value_t = 3)]
    pub tags_max: usize,
    /// Smallest glyph cell side in pixels.
    #[arg(long, default_value_t = 64)]
    pub icon_min: u32,
    #[arg(long, default_value_t = 160)]
    pub icon_max: u32,
    #[arg(long, default_value_t = 95)]
    pub words: usize,
    /// Fraction of transcript words drawn from the uncorrelated noise vocabulary.
    #[arg(long, default_value_t = 0.2)]
    pub noise: f64,
    #[arg(long, default_value_t = 64)]
    pub embedding_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for curated.jsonl, train.jsonl, test.jsonl and vocab.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Tab-separated `raw<TAB>canonical` tag merges.
    #[arg(long)]
    pub merge_map: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub min_tag_count: usize,
    #[arg(long, default_value_t = 0.2)]
    pub min_aspect: f64,
    #[arg(long, default_value_t = 5.0)]
    pub max_aspect: f64,
    /// Drop records with more tags than this.
    #[arg(long)]
    pub max_tags: Option<usize>,
    /// Keep records without a category (they train the background class).
    #[arg(long)]
    pub admit_uncategorized: bool,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Multiply the learning rate by this factor every period.
    #[arg(long)]
    pub lr_step_factor: Option<f64>,
    #[arg(long)]
    pub lr_step_period: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainTextArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, value_enum)]
    pub head: Head,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Tag vocabulary (vocab.json); defaults to the tags seen in --train.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub hidden: usize,
    #[arg(long, default_value_t = 20_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    /// Mini-batch size; full batch when omitted.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Write the per-iteration loss curve here as JSON.
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainVisionArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, value_enum)]
    pub head: Head,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 8)]
    pub conv1: usize,
    #[arg(long, default_value_t = 16)]
    pub conv2: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, value_enum, default_value_t = AggregationArg::Mean)]
    pub aggregation: AggregationArg,
    #[arg(long, value_enum, default_value_t = SamplerArg::Random)]
    pub sampler: SamplerArg,
    /// Proposal boxes (JSON Lines `{"id","boxes":[...]}`) for the proposals sampler.
    #[arg(long)]
    pub proposals: Option<PathBuf>,
    /// Defaults to 5 for the category head and 500 for the tag head.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5)]
    pub bag_size: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    /// Defaults: ×0.5 every epoch (category), ×0.1 every 50 epochs (tag).
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long, default_value_t = 0.1)]
    pub side_min: f64,
    #[arg(long, default_value_t = 0.4)]
    pub side_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Word embeddings for text models; defaults to embeddings.txt beside the model.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Whitespace-separated transcript file; prints `label<TAB>score` lines.
    #[arg(long, conflicts_with_all = ["image", "manifest"])]
    pub transcript: Option<PathBuf>,
    /// Image file, for vision models; prints `label<TAB>score` lines.
    #[arg(long, conflicts_with = "manifest")]
    pub image: Option<PathBuf>,
    /// Predict every record of a manifest into --out.
    #[arg(long, requires = "out")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub topk: usize,
    /// Put tags named verbatim in the transcript first (tag head only).
    #[arg(long)]
    pub snap: bool,
    /// Patches per bag for vision models.
    #[arg(long, default_value_t = 5)]
    pub bag_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub side_min: f64,
    #[arg(long, default_value_t = 0.4)]
    pub side_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct HashtagArgs {
    /// Vision tag-head checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Proposals output (JSON Lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Take (image, tag) pairs from ground truth.
    #[arg(long, conflicts_with = "tag_predictions")]
    pub ground_truth: Option<PathBuf>,
    /// Take tags from text predictions (output of `predict --manifest`).
    #[arg(long)]
    pub tag_predictions: Option<PathBuf>,
    /// Tags used per image from --tag-predictions.
    #[arg(long, default_value_t = 1)]
    pub tags_per_image: usize,
    #[arg(long, default_value_t = 3500)]
    pub crops: usize,
    #[arg(long, default_value_t = 0.1)]
    pub side_min: f64,
    #[arg(long, default_value_t = 0.4)]
    pub side_max: f64,
    /// Threshold at mean + k·std of covered pixels; `--k=-inf` keeps every covered pixel.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub k: f64,
    /// 4 or 8.
    #[arg(long, default_value_t = 4, value_parser = parse_connectivity)]
    pub connectivity: u8,
    #[arg(long, default_value_t = 0.005)]
    pub min_area_fraction: f64,
    #[arg(long, default_value_t = 0.25)]
    pub fill_ratio_min: f64,
    /// Emit the best unrefined candidate when refinement discards everything.
    #[arg(long)]
    pub fallback: bool,
    /// Write each heatmap as PGM and raw float grid into this directory.
    #[arg(long)]
    pub heatmaps: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Test manifest carrying the true categories and tags.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    pub category_predictions: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    pub tag_predictions: Option<PathBuf>,
    #[arg(long, requires = "ground_truth")]
    pub proposals: Option<PathBuf>,
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Enables the snap and vote text baselines.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Tag vocabulary for the text baselines; defaults to tags in --manifest.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub side_min: f64,
    #[arg(long, default_value_t = 0.4)]
    pub side_max: f64,
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Ground-truth JSON Lines store; created if missing.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub annotators_per_pair: usize,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Accepted for uniformity; task order does not depend on it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_connectivity(s: &str) -> Result<u8, String> {
    match s {
        "4" => Ok(4),
        "8" => Ok(8),
        _ => Err(format!("expected 4 or 8, got `{s}`")),
    }
}
