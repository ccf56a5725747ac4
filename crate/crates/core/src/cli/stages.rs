//! One function per subcommand. Each reads its inputs from disk, writes its
//! outputs under `out` and returns the paths it wrote.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::args::*;
use crate::analyze::{run_analysis, AnalyzeConfig, CORRELATIONS_FILE, SIMILARITY_FILE, STATE_VALUES_FILE, SUMMARY_FILE};
use crate::cluster::{import_labels, kmeans, labels_to_csv, select_k, silhouette, ClusterModel, DayLabel, KMeansConfig};
use crate::embed::{
    corpus_loss, embeddings_to_csv, import_embeddings, pre_cluster, select_triplets, BuiltinEmbedder, EmbeddingVector, LabeledDay,
    TripletReport, DEFAULT_DIM,
};
use crate::ingest::{
    format_utc_offset, latest_clinical, parse_clinical, parse_events, parse_utc_offset, read_cohort, segment_days, write_cohort,
    ClinicalRecord, CohortMeta, EventFormat, Vocabulary, CLINICAL_FILE, COHORT_FILE, META_FILE,
};
use crate::io::{csv_bytes, open, read_jsonl, read_to_string, write_atomic, write_json, write_jsonl};
use crate::period::PeriodScheme;
use crate::predict::{run_experiment_grid, write_report, FeatureInputs, PredictConfig};
use crate::preprocess::{infer_alphabet, rectify_cohort, DailyActivitySequence, RectifyConfig};
use crate::reduce::{import_points, kl_trace_to_csv, points_to_csv, reduce_embeddings, Point2D, TsneConfig};
use crate::rng::derive_seed;
use crate::synth::{default_archetypes, generate_cohort, write_synth, ArchetypeSet, SynthConfig, CLINICAL_FILE as SYNTH_CLINICAL, EVENTS_FILE, TRUTH_FILE};
use crate::transition::{
    calendar_state_vectors, import_states, states_to_csv, trailing_state_vectors, LabeledPoint, StatesConfig, Threshold,
};
use crate::{DayKey, Error, Result};

/// `dir/stem.suffix` next to a file output, e.g. `labels.csv` gives
/// `labels.model.json`.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn read_days(path: &Path) -> Result<Vec<DailyActivitySequence>> {
    read_jsonl(path)
}

pub fn read_clinical_csv(path: &Path) -> Result<Vec<ClinicalRecord>> {
    parse_clinical(open(path)?)
}

fn alphabet_for(days: &[DailyActivitySequence], given: &Option<Vec<String>>) -> Vec<String> {
    given.clone().unwrap_or_else(|| infer_alphabet(days))
}

pub fn ingest(a: &IngestArgs) -> Result<Vec<PathBuf>> {
    let rooms = a.rooms.clone().unwrap_or_else(|| Vocabulary::default().rooms().to_vec());
    let vocab = Vocabulary::new(rooms, !a.no_sleep_mat)?;
    let offset = parse_utc_offset(&a.tz_offset)?;
    let parsed = parse_events(open(&a.events)?, EventFormat::from_path(&a.events), &vocab, a.lenient)?;
    if parsed.events.is_empty() {
        return Err(Error::invalid(format!("{}: no valid events", a.events.display())));
    }
    let mut index = segment_days(parsed.events, offset);
    let (clinical_records, clinical_dropped) = match &a.clinical {
        Some(path) => {
            let records = read_clinical_csv(path)?;
            let n = records.len();
            (n, index.attach_clinical(records))
        }
        None => (0, 0),
    };
    let meta = CohortMeta {
        utc_offset: format_utc_offset(offset),
        vocabulary: vocab,
        participants: index.days.len(),
        days: index.day_count(),
        events: index.event_count(),
        duplicate_events: index.duplicate_events,
        skipped_rows: parsed.skipped,
        clinical_records,
        clinical_dropped,
    };
    info!("ingest: {} events over {} participant-days", meta.events, meta.days);
    make_dir(&a.out)?;
    write_cohort(&a.out, &index, &meta)?;
    Ok(vec![a.out.join(COHORT_FILE), a.out.join(CLINICAL_FILE), a.out.join(META_FILE)])
}

pub fn preprocess(a: &PreprocessArgs) -> Result<Vec<PathBuf>> {
    let (index, _) = read_cohort(&a.cohort)?;
    let days = rectify_cohort(&index, &RectifyConfig::new(a.window_min)?);
    info!("preprocess: {} days", days.len());
    write_jsonl(&a.out, &days)?;
    Ok(vec![a.out.clone()])
}

/// Orders imported vectors like the days; every day needs a vector.
fn align_embeddings(days: &[DailyActivitySequence], vectors: Vec<EmbeddingVector>) -> Result<Vec<EmbeddingVector>> {
    let mut by_key: HashMap<DayKey, EmbeddingVector> = HashMap::with_capacity(vectors.len());
    for v in vectors {
        let key = v.key();
        if by_key.insert(key.clone(), v).is_some() {
            return Err(Error::invalid(format!("duplicate embedding for {key}")));
        }
    }
    days.iter()
        .map(|d| by_key.remove(&d.key()).ok_or_else(|| Error::invalid(format!("no embedding for {}", d.key()))))
        .collect()
}

pub fn embed(a: &EmbedArgs) -> Result<Vec<PathBuf>> {
    let days = read_days(&a.days)?;
    let vectors = match &a.import {
        Some(path) => align_embeddings(&days, import_embeddings(open(path)?)?)?,
        None => {
            let embedder = BuiltinEmbedder::new(alphabet_for(&days, &a.alphabet), a.builtin_d.unwrap_or(DEFAULT_DIM))?;
            let (vectors, degenerate) = embedder.embed_all(&days)?;
            if degenerate > 0 {
                log::warn!("embed: {degenerate} days have no presence slots");
            }
            vectors
        }
    };
    write_atomic(&a.out, &embeddings_to_csv(&vectors)?)?;
    Ok(vec![a.out.clone()])
}

fn key_cells(k: &DayKey) -> [String; 2] {
    [k.participant_id.clone(), k.date.to_string()]
}

pub fn triplets(a: &TripletsArgs) -> Result<Vec<PathBuf>> {
    let days = read_days(&a.days)?;
    let vectors = align_embeddings(&days, import_embeddings(open(&a.embeddings)?)?)?;
    let alphabet = alphabet_for(&days, &a.alphabet);
    let pre = pre_cluster(&days, &alphabet, parse_k_range(&a.onehot_k)?, derive_seed(a.seed, "onehot"))?;
    let labeled: Vec<LabeledDay> =
        days.iter().zip(&pre.labels).map(|(d, &cluster)| LabeledDay { key: d.key(), cluster }).collect();
    let sel = select_triplets(&labeled, a.window_days, a.n, a.seed)?;
    let lookup: HashMap<DayKey, Vec<f64>> = vectors.into_iter().map(|v| (v.key(), v.values)).collect();
    let mean_loss = if sel.triplets.is_empty() { None } else { Some(corpus_loss(&sel.triplets, &lookup, a.margin)?) };
    let report = TripletReport {
        requested: a.n,
        generated: sel.triplets.len(),
        skipped_anchors: sel.skipped_anchors,
        eligible_anchors: sel.eligible_anchors,
        window_days: a.window_days,
        margin: a.margin,
        mean_loss,
        onehot_k: pre.k,
        onehot_silhouettes: pre.silhouettes,
        seed: a.seed,
    };
    let header = ["anchor_participant_id", "anchor_date", "positive_participant_id", "positive_date", "negative_participant_id", "negative_date"]
        .map(String::from);
    let rows = sel.triplets.iter().map(|t| [key_cells(&t.anchor), key_cells(&t.positive), key_cells(&t.negative)].concat());
    let csv_path = sidecar(&a.out, "triplets.csv");
    write_atomic(&csv_path, &csv_bytes(&header, rows)?)?;
    write_json(&a.out, &report)?;
    Ok(vec![a.out.clone(), csv_path])
}

pub fn reduce(a: &ReduceArgs) -> Result<Vec<PathBuf>> {
    let vectors = import_embeddings(open(&a.embeddings)?)?;
    let cfg = TsneConfig {
        perplexity: a.perplexity,
        iterations: a.iters,
        learning_rate: a.learning_rate,
        early_exaggeration: a.early_exaggeration,
        exaggeration_iters: a.exaggeration_iters,
        kl_every: a.kl_every,
        seed: a.seed,
    };
    let (points, trace) = reduce_embeddings(&vectors, &cfg)?;
    if let Some(last) = trace.last() {
        info!("reduce: {} points, final KL {:.4}", points.len(), last.kl);
    }
    let trace_path = sidecar(&a.out, "kl_trace.csv");
    write_atomic(&a.out, &points_to_csv(&points)?)?;
    write_atomic(&trace_path, &kl_trace_to_csv(&trace)?)?;
    Ok(vec![a.out.clone(), trace_path])
}

/// Written next to the labels by `cluster`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDump {
    pub input: ClusterInput,
    pub k: usize,
    /// Silhouette per candidate k (one entry when k was fixed).
    pub silhouettes: Vec<(usize, f64)>,
    pub model: ClusterModel,
}

pub fn cluster(a: &ClusterArgs) -> Result<Vec<PathBuf>> {
    let (input, keys, x): (ClusterInput, Vec<DayKey>, Vec<Vec<f64>>) = match (&a.points, &a.embeddings) {
        (Some(p), None) => {
            let pts = import_points(open(p)?)?;
            (ClusterInput::Points, pts.iter().map(Point2D::key).collect(), pts.iter().map(Point2D::coords).collect())
        }
        (None, Some(e)) => {
            let v = import_embeddings(open(e)?)?;
            (ClusterInput::Embeddings, v.iter().map(EmbeddingVector::key).collect(), v.into_iter().map(|v| v.values).collect())
        }
        _ => return Err(Error::Config("cluster needs exactly one of --points or --embeddings".into())),
    };
    let (model, silhouettes) = match &a.select_k {
        Some(range) => {
            let sel = select_k(&x, parse_k_range(range)?, &KMeansConfig::new(2, a.seed))?;
            (sel.model, sel.scores)
        }
        None => {
            let k = a.k.unwrap_or(5);
            let model = kmeans(&x, &KMeansConfig::new(k, a.seed))?;
            let s = if k >= 2 && k < x.len() { vec![(k, silhouette(&x, &model.assignments)?)] } else { Vec::new() };
            (model, s)
        }
    };
    info!("cluster: k = {}", model.k);
    let labels: Vec<DayLabel> = keys
        .into_iter()
        .zip(&model.assignments)
        .map(|(k, &cluster)| DayLabel { participant_id: k.participant_id, date: k.date, cluster })
        .collect();
    let dump = ClusterDump { input, k: model.k, silhouettes, model };
    let model_path = sidecar(&a.out, "model.json");
    write_atomic(&a.out, &labels_to_csv(&labels)?)?;
    write_json(&model_path, &dump)?;
    Ok(vec![a.out.clone(), model_path])
}

/// Joins layout points with their cluster labels.
pub fn labeled_points(points: Vec<Point2D>, labels: Vec<DayLabel>) -> Result<Vec<LabeledPoint>> {
    let by_key: HashMap<DayKey, usize> = labels.iter().map(|l| (l.key(), l.cluster)).collect();
    points
        .into_iter()
        .map(|p| {
            let label = *by_key.get(&p.key()).ok_or_else(|| Error::invalid(format!("no cluster label for {}", p.key())))?;
            Ok(LabeledPoint { participant_id: p.participant_id, date: p.date, x: p.x, y: p.y, label })
        })
        .collect()
}

pub fn states(a: &StatesArgs) -> Result<Vec<PathBuf>> {
    let points = labeled_points(import_points(open(&a.points)?)?, import_labels(open(&a.labels)?)?)?;
    if points.is_empty() {
        return Err(Error::invalid("no labeled points"));
    }
    let k = a.k.unwrap_or_else(|| points.iter().map(|p| p.label).max().unwrap_or(0) + 1);
    let cfg = StatesConfig {
        k,
        alpha: a.alpha,
        max_iter: a.max_iter,
        tol: a.tol,
        mode: a.mode,
        threshold: a.threshold.map_or(Threshold::Quantile(a.threshold_quantile), Threshold::Absolute),
    };
    let records = match &a.windows {
        Some(w) => trailing_state_vectors(&points, w, &cfg)?,
        None => {
            let first = points.iter().map(|p| p.date).min().expect("non-empty");
            calendar_state_vectors(&points, &PeriodScheme::aligned_to(first, a.period_months)?, &cfg)?
        }
    };
    info!("states: {} state vectors (k = {k})", records.len());
    let vectors: Vec<_> = records.iter().map(|r| r.state.clone()).collect();
    let matrices = sidecar(&a.out, "matrices.json");
    write_atomic(&a.out, &states_to_csv(&vectors)?)?;
    write_json(&matrices, &records)?;
    Ok(vec![a.out.clone(), matrices])
}

pub fn analyze(a: &AnalyzeArgs) -> Result<Vec<PathBuf>> {
    let states = import_states(open(&a.states)?)?;
    let clinical = read_clinical_csv(&a.clinical)?;
    let first = states.iter().map(|s| s.period.start).min().ok_or_else(|| Error::invalid("no state vectors"))?;
    let scheme = PeriodScheme::aligned_to(first, a.period_months)?;
    let cfg = AnalyzeConfig { period_months: a.period_months, k_min: a.k_min, k_max: a.k_max };
    make_dir(&a.out)?;
    let summary = run_analysis(&states, &clinical, &scheme, &cfg, a.seed, &a.out)?;
    info!("analyze: {} periods, {} skipped sub-analyses", summary.periods.len(), summary.skipped.len());
    Ok([STATE_VALUES_FILE, SIMILARITY_FILE, CORRELATIONS_FILE, SUMMARY_FILE].iter().map(|f| a.out.join(f)).collect())
}

pub fn predict(a: &PredictArgs) -> Result<Vec<PathBuf>> {
    let days = read_days(&a.days)?;
    let states = import_states(open(&a.states)?)?;
    let clinical = latest_clinical(&read_clinical_csv(&a.clinical)?);
    let alphabet = alphabet_for(&days, &a.alphabet);
    let inputs = FeatureInputs::new(&days, states, clinical, alphabet, derive_seed(a.seed, "random_word"));
    let cfg = PredictConfig {
        sets: a.sets.clone(),
        targets: a.targets.clone(),
        windows: a.windows.clone(),
        lambdas: a.lambdas.clone(),
        bootstrap_resamples: a.bootstrap,
    };
    let report = run_experiment_grid(&inputs, &cfg, a.seed)?;
    info!("predict: {} rows, {} skipped cells", report.experiments.len(), report.skipped.len());
    make_dir(&a.out)?;
    write_report(&a.out, &report)?;
    Ok(vec![a.out.join("report.csv"), a.out.join("report.json")])
}

pub const ARCHETYPES_FILE: &str = "archetypes.json";

pub fn synth(a: &SynthArgs) -> Result<Vec<PathBuf>> {
    let set = match &a.archetypes {
        Some(path) => ArchetypeSet::from_json(&read_to_string(path)?)?,
        None => default_archetypes(),
    };
    let cfg = SynthConfig { participants: a.participants, days: a.days, start_date: a.start_date };
    let cohort = generate_cohort(&cfg, &set, &Vocabulary::default(), a.seed)?;
    info!("synth: {} events for {} participants", cohort.events.len(), a.participants);
    make_dir(&a.out)?;
    write_synth(&a.out, &cohort)?;
    write_json(&a.out.join(ARCHETYPES_FILE), &set)?;
    Ok([EVENTS_FILE, SYNTH_CLINICAL, TRUTH_FILE, ARCHETYPES_FILE].iter().map(|f| a.out.join(f)).collect())
}
