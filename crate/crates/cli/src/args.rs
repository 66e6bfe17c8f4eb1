use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use signshot::retrieval::Similarity;

#[derive(Debug, Parser)]
#[command(name = "signshot", version, about = "One-shot sign recognition from pose keypoints")]
pub struct Cli {
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    /// Log only warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of keypoint sequences.
    Synth(SynthArgs),
    /// Pretrain a PoseFormer on a labeled dataset.
    Train(TrainArgs),
    /// Print embeddings of poseseq documents.
    Embed(EmbedArgs),
    /// Build a support set from a dictionary (one exemplar per label).
    Index(IndexArgs),
    /// Rank the labels of a support set for one query document.
    Query(QueryArgs),
    /// Evaluate labeled queries against a support set.
    Eval(EvalArgs),
    /// Support-set perturbation: resample exemplars over many seeds.
    Perturb(PerturbArgs),
    /// Dictionary-size scaling over nested support sets.
    Scale(ScaleArgs),
    /// Train every ablation variant and compare under perturbation.
    Ablate(AblateArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Serve the HTTP lookup API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (`<label>/<nnnn>.json`).
    #[arg(long)]
    pub out: PathBuf,
    /// Generator settings as JSON; flags below override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Samples per class.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Per-coordinate noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Time-warp amplitude, at most 1/pi.
    #[arg(long)]
    pub warp: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also split classes: this fraction goes to `<out>/pretrain`, the rest to `<out>/oneshot`.
    #[arg(long, value_name = "FRACTION")]
    pub split: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model preset (asl, vgt, small, tiny) or a ModelConfig JSON file.
    #[arg(long, default_value = "small")]
    pub config: String,
    /// Training preset (asl, vgt, small) or a TrainConfig JSON file.
    #[arg(long, default_value = "small")]
    pub train_config: String,
    /// Override the number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seeds weight initialization, shuffling and dropout.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Write per-epoch loss and accuracy here.
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// A poseseq file or a dataset directory.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SupportArgs {
    /// Similarity between query and support embeddings.
    #[arg(long, default_value = "scaled_dot", value_parser = parse_similarity)]
    pub similarity: Similarity,
    /// Softmax temperature.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f32,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dictionary directory; the first sample of each label is used.
    #[arg(long)]
    pub dict: PathBuf,
    /// Output support-set file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub support: SupportArgs,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub support: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Query poseseq document.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Override the support set's temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub support: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled query directory.
    #[arg(long)]
    pub queries: PathBuf,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Recall cut-offs.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub ks: Vec<usize>,
    /// Name for the dataset column.
    #[arg(long, default_value = "synthetic")]
    pub dataset: String,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Also write metrics.csv and summary.csv into this directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    /// One-shot dataset: candidates and (unless --queries) queries.
    #[arg(long)]
    pub data: PathBuf,
    /// Separate query directory; then every --data sample is a candidate.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Leading samples per class used as candidates; the rest are queries.
    #[arg(long, default_value_t = 1)]
    pub candidates: usize,
    /// First seed; runs use seed, seed+1, ...
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub support: SupportArgs,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub pool: PoolArgs,
    /// Number of resampled support sets.
    #[arg(long, default_value_t = 100)]
    pub seeds: usize,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub pool: PoolArgs,
    /// Strictly increasing dictionary sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Pretraining dataset (classes disjoint from --data).
    #[arg(long)]
    pub pretrain: PathBuf,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[arg(long, default_value = "small")]
    pub config: String,
    #[arg(long, default_value = "small")]
    pub train_config: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed for weight initialization and training.
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
    #[arg(long, default_value_t = 100)]
    pub seeds: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Model preset or ModelConfig JSON file.
    #[arg(long, default_value = "tiny")]
    pub config: String,
    /// Classes of the probe classifier.
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Remove one block (no_input_conv, no_frame_embedding, no_intermediate_conv).
    #[arg(long)]
    pub ablation: Option<String>,
    /// Random probe inputs.
    #[arg(long, default_value_t = 2)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pass threshold on the maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub support: PathBuf,
    /// Write-ahead log of added signs, replayed at startup.
    #[arg(long)]
    pub wal: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

fn parse_similarity(s: &str) -> Result<Similarity, String> {
    s.parse()
}
