//! Subcommand arguments. Every struct is also the resolved, serializable
//! form recorded in run manifests.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::transition::TransitionMode;

#[derive(Debug, Parser)]
#[command(name = "latent-states", version, about = "Latent behavioural state vectors from in-home sensor streams")]
pub struct Cli {
    /// Worker threads (overrides LATENT_STATES_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "subcommand")]
pub enum Command {
    /// Parse and validate events and clinical records into a cohort index.
    Ingest(IngestArgs),
    /// Rectify cohort days into fixed windows.
    Preprocess(PreprocessArgs),
    /// Embed rectified days (built-in embedder or imported vectors).
    Embed(EmbedArgs),
    /// Select triplets and evaluate the triplet loss of an embedding file.
    Triplets(TripletsArgs),
    /// Project embeddings to 2D with exact t-SNE.
    Reduce(ReduceArgs),
    /// Cluster days into latent states.
    Cluster(ClusterArgs),
    /// Build transition matrices and PageRank state vectors.
    States(StatesArgs),
    /// Similarity, correlation and re-clustering tables per period.
    Analyze(AnalyzeArgs),
    /// Ridge/LOOCV prediction of clinical scores.
    Predict(PredictArgs),
    /// Generate a synthetic cohort with planted archetypes.
    Synth(SynthArgs),
    /// Run every stage from one configuration file.
    Pipeline(PipelineArgs),
    /// Re-run a command from its manifest and compare the outputs.
    Replay(ReplayArgs),
    /// Tidy heatmap and trace tables from an analysis directory.
    PlotData(PlotDataArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Preprocess(_) => "preprocess",
            Command::Embed(_) => "embed",
            Command::Triplets(_) => "triplets",
            Command::Reduce(_) => "reduce",
            Command::Cluster(_) => "cluster",
            Command::States(_) => "states",
            Command::Analyze(_) => "analyze",
            Command::Predict(_) => "predict",
            Command::Synth(_) => "synth",
            Command::Pipeline(_) => "pipeline",
            Command::Replay(_) => "replay",
            Command::PlotData(_) => "plot-data",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub clinical: Option<PathBuf>,
    #[arg(long, default_value = "+00:00", allow_hyphen_values = true)]
    pub tz_offset: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip malformed rows instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Comma-separated room names (defaults to the standard five rooms).
    #[arg(long, value_delimiter = ',')]
    pub rooms: Option<Vec<String>>,
    /// Reject bed-in/bed-out markers.
    #[arg(long)]
    pub no_sleep_mat: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub window_min: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub days: PathBuf,
    /// Dimension of the built-in embedder.
    #[arg(long, conflicts_with = "import")]
    pub builtin_d: Option<usize>,
    /// Externally produced embeddings to validate and align with the days.
    #[arg(long)]
    pub import: Option<PathBuf>,
    /// Slot alphabet; inferred from the days when absent.
    #[arg(long, value_delimiter = ',')]
    pub alphabet: Option<Vec<String>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TripletsArgs {
    #[arg(long)]
    pub days: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub window_days: i64,
    #[arg(long, default_value_t = 50_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    /// Range of k for the one-hot pre-clustering, as `min:max`.
    #[arg(long, default_value = "2:8")]
    pub onehot_k: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub alphabet: Option<Vec<String>>,
    /// Report path (JSON); the triplets go next to it as CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReduceArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 200.0)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 12.0)]
    pub early_exaggeration: f64,
    #[arg(long, default_value_t = 250)]
    pub exaggeration_iters: usize,
    #[arg(long, default_value_t = 50)]
    pub kl_every: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ClusterInput {
    Points,
    Embeddings,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ClusterArgs {
    /// 2D points from `reduce`.
    #[arg(long, conflicts_with = "embeddings", required_unless_present = "embeddings")]
    pub points: Option<PathBuf>,
    /// Embedding vectors from `embed`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, conflicts_with = "select_k")]
    pub k: Option<usize>,
    /// Choose k by silhouette over `min:max`.
    #[arg(long)]
    pub select_k: Option<String>,
    #[arg(long)]
    pub seed: u64,
    /// Labels CSV; the model dump goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StatesArgs {
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Number of states; defaults to the largest label plus one.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0.85)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.10, conflicts_with = "threshold")]
    pub threshold_quantile: f64,
    /// Absolute proximity threshold in layout units.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value = "proximity")]
    pub mode: TransitionMode,
    #[arg(long, default_value_t = 3)]
    pub period_months: u32,
    /// Trailing windows in days; replaces the calendar periods.
    #[arg(long, value_delimiter = ',')]
    pub windows: Option<Vec<u32>>,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// State vector CSV; transition matrices go next to it as JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub states: PathBuf,
    #[arg(long)]
    pub clinical: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub period_months: u32,
    #[arg(long, default_value_t = 2)]
    pub k_min: usize,
    #[arg(long, default_value_t = 5)]
    pub k_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub days: PathBuf,
    /// Trailing-window state vectors (`states --windows`).
    #[arg(long)]
    pub states: PathBuf,
    #[arg(long)]
    pub clinical: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "baseline,proportion_baseline,random_word,state,characteristics,state+characteristics")]
    pub sets: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "mmse,adascog,delta_mmse,delta_adascog")]
    pub targets: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "7,15,30,90,180")]
    pub windows: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1,10")]
    pub lambdas: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long)]
    pub alphabet: Option<Vec<String>>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 30)]
    pub participants: usize,
    /// Archetype definitions (JSON); the three built-in archetypes if absent.
    #[arg(long)]
    pub archetypes: Option<PathBuf>,
    #[arg(long, default_value_t = 180)]
    pub days: usize,
    #[arg(long, default_value = "2023-08-01")]
    pub start_date: chrono::NaiveDate,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PipelineArgs {
    /// TOML configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the configured root seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write the replayed outputs here instead of the original location.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PlotDataArgs {
    #[arg(long)]
    pub analysis: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `min:max` into an inclusive range.
pub fn parse_k_range(s: &str) -> crate::Result<std::ops::RangeInclusive<usize>> {
    let bad = || crate::Error::Config(format!("expected `min:max` with 2 <= min <= max, got `{s}`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a < 2 || a > b {
        return Err(bad());
    }
    Ok(a..=b)
}
