use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rsir_core::{ExpansionMethod, PcaLevel};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "rsir",
    version,
    about = "VLAD image retrieval with memory-vector query expansion"
)]
pub struct Cli {
    /// Worker threads for parallel stages (defaults to all cores).
    #[arg(long, global = true, env = "RSIR_WORKERS")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic clustered descriptor dataset.
    Synth(SynthArgs),
    /// Check a dataset manifest against its descriptor files.
    Validate(ValidateArgs),
    /// Train a k-means visual-word codebook.
    TrainCodebook(TrainCodebookArgs),
    /// Fit a PCA model on local features or on global descriptors.
    TrainPca(TrainPcaArgs),
    /// Aggregate every image of a dataset into a searchable index.
    BuildIndex(BuildIndexArgs),
    /// Rank the index against one query image.
    Query(QueryArgs),
    /// Run every image as a query and report precision@N.
    Evaluate(EvaluateArgs),
    /// Time exhaustive search over a grid of index sizes and dimensions.
    Benchmark(BenchmarkArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Validate(_) => "validate",
            Command::TrainCodebook(_) => "train-codebook",
            Command::TrainPca(_) => "train-pca",
            Command::BuildIndex(_) => "build-index",
            Command::Query(_) => "query",
            Command::Evaluate(_) => "evaluate",
            Command::Benchmark(_) => "benchmark",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Expansion {
    None,
    Psum,
    Pinv,
}

impl From<Expansion> for ExpansionMethod {
    fn from(e: Expansion) -> Self {
        match e {
            Expansion::None => ExpansionMethod::None,
            Expansion::Psum => ExpansionMethod::Psum,
            Expansion::Pinv => ExpansionMethod::Pinv,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Feature,
    Global,
}

impl From<Level> for PcaLevel {
    fn from(l: Level) -> Self {
        match l {
            Level::Feature => PcaLevel::Feature,
            Level::Global => PcaLevel::Global,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Images per class.
    #[arg(long, default_value_t = 50)]
    pub images: usize,
    /// Local descriptors per image.
    #[arg(long, default_value_t = 300)]
    pub per_image: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Spread of descriptors around their class prototypes.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Spread of the class prototypes themselves.
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    /// Dataset directory holding manifest.toml.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Also write validation.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainCodebookArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Visual words.
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    /// Most attentive descriptors taken from each image for training.
    #[arg(long, default_value_t = 100)]
    pub per_image: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Relative inertia change that counts as converged.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Feature-level PCA applied before clustering.
    #[arg(long)]
    pub feature_pca: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainPcaArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum)]
    pub level: Level,
    /// Output dimension.
    #[arg(long)]
    pub dim: usize,
    /// Training descriptors per image (feature level).
    #[arg(long, default_value_t = 100)]
    pub per_image: usize,
    /// Codebook used to build the globals (global level).
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    /// Feature PCA the codebook was trained under (global level).
    #[arg(long)]
    pub feature_pca: Option<PathBuf>,
    /// Most attentive descriptors aggregated per image (global level).
    #[arg(long, default_value_t = 300)]
    pub top: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildIndexArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    /// Most attentive descriptors aggregated per image.
    #[arg(long, default_value_t = 300)]
    pub top: usize,
    #[arg(long)]
    pub feature_pca: Option<PathBuf>,
    #[arg(long)]
    pub global_pca: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct QueryArgs {
    /// Index file; its index.meta.json must sit beside it.
    #[arg(long)]
    pub index: PathBuf,
    /// Dataset supplying labels and query images (defaults to the one indexed).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Image id from the dataset to use as the query.
    #[arg(
        long,
        conflicts_with = "descriptors",
        required_unless_present = "descriptors"
    )]
    pub image: Option<String>,
    /// Descriptor file to use as the query.
    #[arg(long)]
    pub descriptors: Option<PathBuf>,
    /// Drop the query image itself from its own ranking.
    #[arg(long)]
    pub leave_one_out: bool,
    #[arg(long, value_enum, default_value = "none")]
    pub expansion: Expansion,
    /// Neighbours combined into the expanded query.
    #[arg(long, default_value_t = 3)]
    pub expansion_top: usize,
    #[arg(long, default_value_t = 20)]
    pub top_k: usize,
    /// Also write query.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Cut-offs N for precision@N.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,10,15,20")]
    pub n: Vec<usize>,
    #[arg(long, value_enum, default_value = "none")]
    pub expansion: Expansion,
    #[arg(long, default_value_t = 3)]
    pub expansion_top: usize,
    /// Keep each query in its own ranking.
    #[arg(long)]
    pub include_self: bool,
    /// Extra copy of the text report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchmarkArgs {
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,300,400,500")]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "16384,1024,512,256")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 51)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 20)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
