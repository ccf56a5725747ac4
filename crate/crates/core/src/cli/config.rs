//! Pipeline configuration (TOML) and the stage chain it drives.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::args::*;
use super::stages;
use crate::analyze::AnalyzeConfig;
use crate::embed::DEFAULT_DIM;
use crate::ingest::Vocabulary;
use crate::predict::PredictConfig;
use crate::rng::derive_seed;
use crate::transition::TransitionMode;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub events: PathBuf,
    pub clinical: PathBuf,
    #[serde(default = "default_offset")]
    pub tz_offset: String,
    #[serde(default)]
    pub lenient: bool,
    #[serde(default)]
    pub rooms: Option<Vec<String>>,
    #[serde(default = "yes")]
    pub sleep_mat: bool,
}

fn default_offset() -> String {
    "+00:00".into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub window_minutes: u32,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self { window_minutes: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedSection {
    pub dim: usize,
    /// External embeddings used instead of the built-in embedder.
    pub import: Option<PathBuf>,
}

impl Default for EmbedSection {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM, import: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TripletSection {
    pub enabled: bool,
    pub window_days: i64,
    pub n: usize,
    pub margin: f64,
    pub onehot_k: String,
}

impl Default for TripletSection {
    fn default() -> Self {
        Self { enabled: false, window_days: 30, n: 50_000, margin: 1.0, onehot_k: "2:8".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReduceSection {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub kl_every: usize,
}

impl Default for ReduceSection {
    fn default() -> Self {
        Self { perplexity: 30.0, iterations: 1000, learning_rate: 200.0, early_exaggeration: 12.0, exaggeration_iters: 250, kl_every: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSection {
    pub input: ClusterInput,
    /// Fixed number of states; ignored when `select_k` is set.
    pub k: usize,
    /// `min:max` range searched by silhouette.
    pub select_k: Option<String>,
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self { input: ClusterInput::Points, k: 5, select_k: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatesSection {
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub mode: TransitionMode,
    pub threshold_quantile: f64,
    pub threshold: Option<f64>,
    pub period_months: u32,
}

impl Default for StatesSection {
    fn default() -> Self {
        Self { alpha: 0.85, max_iter: 100, tol: 1e-8, mode: TransitionMode::Proximity, threshold_quantile: 0.10, threshold: None, period_months: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub input: InputSection,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub embed: EmbedSection,
    #[serde(default)]
    pub triplets: TripletSection,
    #[serde(default)]
    pub reduce: ReduceSection,
    #[serde(default)]
    pub cluster: ClusterSection,
    #[serde(default)]
    pub states: StatesSection,
    #[serde(default)]
    pub analyze: AnalyzeConfig,
    #[serde(default)]
    pub predict: PredictConfig,
}

impl PipelineConfig {
    /// Parses TOML; errors name the offending key path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().to_string();
            if path == "." { Error::Config(msg) } else { Error::Config(format!("{path}: {msg}")) }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&crate::io::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.predict.validate()?;
        if let Some(r) = &self.cluster.select_k {
            parse_k_range(r)?;
        } else if self.cluster.k < 2 {
            return Err(Error::Config("cluster.k must be at least 2".into()));
        }
        if self.analyze.k_min < 2 || self.analyze.k_min > self.analyze.k_max {
            return Err(Error::Config("analyze: need 2 <= k_min <= k_max".into()));
        }
        Ok(())
    }

    /// Every stage seed, derived from the root seed by label.
    pub fn seeds(&self) -> BTreeMap<String, u64> {
        ["triplets", "reduce", "cluster", "analyze", "predict"]
            .iter()
            .map(|s| (s.to_string(), derive_seed(self.seed, s)))
            .chain(std::iter::once(("root".to_string(), self.seed)))
            .collect()
    }

    pub fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![self.input.events.clone(), self.input.clinical.clone()];
        v.extend(self.embed.import.clone());
        v
    }
}

/// Output layout of a pipeline run.
pub struct Layout {
    pub cohort: PathBuf,
    pub days: PathBuf,
    pub embeddings: PathBuf,
    pub triplets: PathBuf,
    pub points: PathBuf,
    pub labels: PathBuf,
    pub states: PathBuf,
    pub window_states: PathBuf,
    pub analysis: PathBuf,
    pub predict: PathBuf,
}

impl Layout {
    pub fn new(out: &Path) -> Self {
        Self {
            cohort: out.join("cohort"),
            days: out.join("days.jsonl"),
            embeddings: out.join("embeddings.csv"),
            triplets: out.join("triplets.json"),
            points: out.join("points.csv"),
            labels: out.join("labels.csv"),
            states: out.join("states.csv"),
            window_states: out.join("window_states.csv"),
            analysis: out.join("analysis"),
            predict: out.join("predict"),
        }
    }
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    info!("stage {name}");
    f().map_err(|e| e.in_stage(name))
}

/// Runs ingest, preprocess, embed, (triplets,) reduce, cluster, states,
/// analyze and predict, each reading the files of the stage before.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let seeds = cfg.seeds();
    let l = Layout::new(out);
    let mut outputs = Vec::new();
    let vocab_rooms = cfg.input.rooms.clone();
    let vocab = Vocabulary::new(vocab_rooms.clone().unwrap_or_else(|| Vocabulary::default().rooms().to_vec()), cfg.input.sleep_mat)?;
    let alphabet = Some(vocab.slot_alphabet());

    outputs.extend(stage("ingest", || {
        stages::ingest(&IngestArgs {
            events: cfg.input.events.clone(),
            clinical: Some(cfg.input.clinical.clone()),
            tz_offset: cfg.input.tz_offset.clone(),
            out: l.cohort.clone(),
            lenient: cfg.input.lenient,
            rooms: vocab_rooms.clone(),
            no_sleep_mat: !cfg.input.sleep_mat,
        })
    })?);
    outputs.extend(stage("preprocess", || {
        stages::preprocess(&PreprocessArgs { cohort: l.cohort.clone(), window_min: cfg.preprocess.window_minutes, out: l.days.clone() })
    })?);
    outputs.extend(stage("embed", || {
        stages::embed(&EmbedArgs {
            days: l.days.clone(),
            builtin_d: Some(cfg.embed.dim),
            import: cfg.embed.import.clone(),
            alphabet: alphabet.clone(),
            out: l.embeddings.clone(),
        })
    })?);
    if cfg.triplets.enabled {
        outputs.extend(stage("triplets", || {
            stages::triplets(&TripletsArgs {
                days: l.days.clone(),
                embeddings: l.embeddings.clone(),
                window_days: cfg.triplets.window_days,
                n: cfg.triplets.n,
                margin: cfg.triplets.margin,
                onehot_k: cfg.triplets.onehot_k.clone(),
                seed: seeds["triplets"],
                alphabet: alphabet.clone(),
                out: l.triplets.clone(),
            })
        })?);
    }
    let r = &cfg.reduce;
    outputs.extend(stage("reduce", || {
        stages::reduce(&ReduceArgs {
            embeddings: l.embeddings.clone(),
            perplexity: r.perplexity,
            iters: r.iterations,
            learning_rate: r.learning_rate,
            early_exaggeration: r.early_exaggeration,
            exaggeration_iters: r.exaggeration_iters,
            kl_every: r.kl_every,
            seed: seeds["reduce"],
            out: l.points.clone(),
        })
    })?);
    outputs.extend(stage("cluster", || {
        let (points, embeddings) = match cfg.cluster.input {
            ClusterInput::Points => (Some(l.points.clone()), None),
            ClusterInput::Embeddings => (None, Some(l.embeddings.clone())),
        };
        stages::cluster(&ClusterArgs {
            points,
            embeddings,
            k: cfg.cluster.select_k.is_none().then_some(cfg.cluster.k),
            select_k: cfg.cluster.select_k.clone(),
            seed: seeds["cluster"],
            out: l.labels.clone(),
        })
    })?);
    let s = &cfg.states;
    let states_args = |windows: Option<Vec<u32>>, out: &Path| StatesArgs {
        points: l.points.clone(),
        labels: l.labels.clone(),
        k: None,
        alpha: s.alpha,
        threshold_quantile: s.threshold_quantile,
        threshold: s.threshold,
        mode: s.mode,
        period_months: s.period_months,
        windows,
        max_iter: s.max_iter,
        tol: s.tol,
        out: out.to_path_buf(),
    };
    outputs.extend(stage("states", || {
        let mut v = stages::states(&states_args(None, &l.states))?;
        v.extend(stages::states(&states_args(Some(cfg.predict.windows.clone()), &l.window_states))?);
        Ok(v)
    })?);
    outputs.extend(stage("analyze", || {
        stages::analyze(&AnalyzeArgs {
            states: l.states.clone(),
            clinical: cfg.input.clinical.clone(),
            period_months: cfg.analyze.period_months,
            k_min: cfg.analyze.k_min,
            k_max: cfg.analyze.k_max,
            seed: seeds["analyze"],
            out: l.analysis.clone(),
        })
    })?);
    let p = &cfg.predict;
    outputs.extend(stage("predict", || {
        stages::predict(&PredictArgs {
            days: l.days.clone(),
            states: l.window_states.clone(),
            clinical: cfg.input.clinical.clone(),
            sets: p.sets.clone(),
            targets: p.targets.clone(),
            windows: p.windows.clone(),
            lambdas: p.lambdas.clone(),
            bootstrap: p.bootstrap_resamples,
            alphabet: alphabet.clone(),
            seed: seeds["predict"],
            out: l.predict.clone(),
        })
    })?);
    Ok(outputs)
}
