//! Period grids of state vectors, participant similarity, state-clinical
//! correlations and re-clustering of state vectors.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{select_k, KMeansConfig};
use crate::embed::cosine;
use crate::ingest::{latest_clinical, ClinicalRecord};
use crate::io::{csv_bytes, fmt_f64, write_atomic, write_json};
use crate::period::{Period, PeriodScheme};
use crate::stats::{mean, pearson, sample_std, CorrelationGap};
use crate::transition::StateVector;
use crate::{Error, Result};

/// State vectors keyed by aligned period and participant. Missing cells are
/// simply absent.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodGrid {
    pub periods: Vec<Period>,
    pub cells: BTreeMap<Period, BTreeMap<String, StateVector>>,
}

impl PeriodGrid {
    pub fn participants(&self, period: &Period) -> Vec<&StateVector> {
        self.cells.get(period).map(|m| m.values().collect()).unwrap_or_default()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.values().map(BTreeMap::len).sum()
    }
}

/// Places each state vector in its period. Every vector must span exactly one
/// period of `scheme`, and a participant may appear once per period.
pub fn build_period_grid(states: &[StateVector], scheme: &PeriodScheme) -> Result<PeriodGrid> {
    let mut cells: BTreeMap<Period, BTreeMap<String, StateVector>> = BTreeMap::new();
    for s in states {
        if !scheme.is_aligned(&s.period) {
            return Err(Error::invalid(format!(
                "{}: period {} overlaps the {}-month grid starting {}",
                s.participant_id, s.period, scheme.months, scheme.start
            )));
        }
        let row = cells.entry(s.period).or_default();
        if row.insert(s.participant_id.clone(), s.clone()).is_some() {
            return Err(Error::invalid(format!("{}: duplicate state vector for {}", s.participant_id, s.period)));
        }
    }
    Ok(PeriodGrid { periods: cells.keys().copied().collect(), cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub period: Period,
    pub participants: Vec<String>,
    /// Days observed per participant in the period.
    pub coverage: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

pub fn cosine_similarity_matrix(grid: &PeriodGrid, period: &Period) -> Result<SimilarityMatrix> {
    let members = grid.participants(period);
    if members.len() < 2 {
        return Err(Error::invalid(format!("period {period} has fewer than two participants")));
    }
    let values = members
        .iter()
        .map(|a| members.iter().map(|b| cosine(&a.values, &b.values)).collect())
        .collect();
    Ok(SimilarityMatrix {
        period: *period,
        participants: members.iter().map(|s| s.participant_id.clone()).collect(),
        coverage: members.iter().map(|s| s.n_days).collect(),
        values,
    })
}

pub const METRICS: [&str; 7] = ["mmse", "adas_cog", "hads_depression", "hads_anxiety", "age", "delta_mmse", "delta_adas"];

pub fn metric_value(record: &ClinicalRecord, metric: &str) -> Option<f64> {
    match metric {
        "mmse" => Some(f64::from(record.mmse)),
        "adas_cog" => Some(record.adas_cog),
        "hads_depression" => Some(f64::from(record.hads_depression)),
        "hads_anxiety" => Some(f64::from(record.hads_anxiety)),
        "age" => Some(record.age),
        "delta_mmse" => record.delta_mmse,
        "delta_adas" => record.delta_adas,
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub period: Period,
    /// 1-based state index.
    pub state: usize,
    pub metric: String,
    pub n: usize,
    pub r: Option<f64>,
    pub p: Option<f64>,
    /// Why `r` is absent.
    pub reason: Option<String>,
}

/// Pearson correlation of every state coordinate with every metric, pairing
/// each participant's state vector with their latest clinical record.
/// Participants lacking a metric are dropped from that cell only.
pub fn correlate_states_clinical(
    grid: &PeriodGrid,
    period: &Period,
    clinical: &[ClinicalRecord],
    metrics: &[&str],
) -> Vec<CorrelationCell> {
    let latest = latest_clinical(clinical);
    let members = grid.participants(period);
    let k = members.first().map_or(0, |s| s.values.len());
    let mut out = Vec::new();
    for state in 0..k {
        for &metric in metrics {
            let (x, y): (Vec<f64>, Vec<f64>) = members
                .iter()
                .filter_map(|s| {
                    let v = latest.get(&s.participant_id).and_then(|r| metric_value(r, metric))?;
                    Some((s.values[state], v))
                })
                .unzip();
            let (r, p, reason) = match pearson(&x, &y) {
                Ok(c) => (Some(c.r), Some(c.p), None),
                Err(CorrelationGap::TooFewPairs) => (None, None, Some("fewer than 3 matched pairs".to_string())),
                Err(CorrelationGap::ZeroVariance) => (None, None, Some("zero variance".to_string())),
            };
            out.push(CorrelationCell { period: *period, state: state + 1, metric: metric.to_string(), n: x.len(), r, p, reason });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation; absent below two values.
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub participants: Vec<String>,
    pub metrics: BTreeMap<String, MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateClustering {
    pub period: Period,
    pub k: usize,
    pub silhouettes: Vec<(usize, f64)>,
    pub labels: BTreeMap<String, usize>,
    pub clusters: Vec<ClusterSummary>,
}

pub fn summarize(values: &[f64]) -> MetricSummary {
    let finite = |v: f64| v.is_finite().then_some(v);
    MetricSummary {
        n: values.len(),
        mean: finite(mean(values)),
        std: finite(sample_std(values)),
    }
}

/// Re-clusters the state vectors of one period and summarizes the clinical
/// metrics of each cluster.
pub fn cluster_state_vectors(
    grid: &PeriodGrid,
    period: &Period,
    clinical: &[ClinicalRecord],
    k_range: RangeInclusive<usize>,
    seed: u64,
) -> Result<StateClustering> {
    let members = grid.participants(period);
    if members.len() < k_range.end() + 1 {
        return Err(Error::invalid(format!(
            "period {period}: {} participants is too few for k up to {}",
            members.len(),
            k_range.end()
        )));
    }
    let points: Vec<Vec<f64>> = members.iter().map(|s| s.values.clone()).collect();
    let sel = select_k(&points, k_range, &KMeansConfig::new(2, seed))?;
    let latest = latest_clinical(clinical);
    let labels: BTreeMap<String, usize> = members
        .iter()
        .zip(&sel.model.assignments)
        .map(|(s, &l)| (s.participant_id.clone(), l))
        .collect();
    let clusters = (0..sel.best_k)
        .map(|c| {
            let ids: Vec<String> = labels.iter().filter(|(_, &l)| l == c).map(|(p, _)| p.clone()).collect();
            let metrics = METRICS
                .iter()
                .map(|&m| {
                    let vals: Vec<f64> = ids.iter().filter_map(|p| latest.get(p).and_then(|r| metric_value(r, m))).collect();
                    (m.to_string(), summarize(&vals))
                })
                .collect();
            ClusterSummary { cluster: c, participants: ids, metrics }
        })
        .collect();
    Ok(StateClustering { period: *period, k: sel.best_k, silhouettes: sel.scores, labels, clusters })
}

/// Long-format state values: one row per period, participant and state.
pub fn state_values_csv(grid: &PeriodGrid) -> Result<Vec<u8>> {
    let header = ["period_start", "period_end", "participant_id", "state", "value"].map(String::from);
    let mut rows = Vec::new();
    for (period, members) in &grid.cells {
        for (pid, s) in members {
            for (i, v) in s.values.iter().enumerate() {
                rows.push(vec![period.start.to_string(), period.end.to_string(), pid.clone(), (i + 1).to_string(), fmt_f64(*v)]);
            }
        }
    }
    csv_bytes(&header, rows)
}

pub fn similarity_csv(matrices: &[SimilarityMatrix]) -> Result<Vec<u8>> {
    let header = ["period_start", "period_end", "participant_i", "participant_j", "similarity"].map(String::from);
    let mut rows = Vec::new();
    for m in matrices {
        for (i, a) in m.participants.iter().enumerate() {
            for (j, b) in m.participants.iter().enumerate() {
                rows.push(vec![m.period.start.to_string(), m.period.end.to_string(), a.clone(), b.clone(), fmt_f64(m.values[i][j])]);
            }
        }
    }
    csv_bytes(&header, rows)
}

pub fn correlations_csv(cells: &[CorrelationCell]) -> Result<Vec<u8>> {
    let header = ["period_start", "period_end", "state", "metric", "n", "r", "p", "reason"].map(String::from);
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    csv_bytes(
        &header,
        cells.iter().map(|c| {
            vec![
                c.period.start.to_string(),
                c.period.end.to_string(),
                c.state.to_string(),
                c.metric.clone(),
                c.n.to_string(),
                opt(c.r),
                opt(c.p),
                c.reason.clone().unwrap_or_default(),
            ]
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeConfig {
    pub period_months: u32,
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self { period_months: 3, k_min: 2, k_max: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub periods: Vec<Period>,
    pub cells: usize,
    pub clusterings: Vec<StateClustering>,
    /// Periods skipped by a sub-analysis, with the reason.
    pub skipped: Vec<(Period, String, String)>,
}

pub const STATE_VALUES_FILE: &str = "state_values.csv";
pub const SIMILARITY_FILE: &str = "similarity.csv";
pub const CORRELATIONS_FILE: &str = "correlations.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Runs every analysis over every period and writes heatmap-ready files.
pub fn run_analysis(
    states: &[StateVector],
    clinical: &[ClinicalRecord],
    scheme: &PeriodScheme,
    cfg: &AnalyzeConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<AnalysisSummary> {
    if cfg.k_min < 2 || cfg.k_min > cfg.k_max {
        return Err(Error::Config(format!("invalid re-clustering range {}..={}", cfg.k_min, cfg.k_max)));
    }
    let grid = build_period_grid(states, scheme)?;
    let mut skipped = Vec::new();
    let per_period: Vec<_> = grid
        .periods
        .par_iter()
        .map(|p| {
            let sim = cosine_similarity_matrix(&grid, p);
            let corr = correlate_states_clinical(&grid, p, clinical, &METRICS);
            let clus = cluster_state_vectors(&grid, p, clinical, cfg.k_min..=cfg.k_max, crate::rng::derive_seed(seed, &p.to_string()));
            (*p, sim, corr, clus)
        })
        .collect();
    let mut sims = Vec::new();
    let mut corrs = Vec::new();
    let mut clusterings = Vec::new();
    for (p, sim, corr, clus) in per_period {
        match sim {
            Ok(m) => sims.push(m),
            Err(e) => skipped.push((p, "similarity".to_string(), e.to_string())),
        }
        corrs.extend(corr);
        match clus {
            Ok(c) => clusterings.push(c),
            Err(e) => skipped.push((p, "clustering".to_string(), e.to_string())),
        }
    }
    write_atomic(&out_dir.join(STATE_VALUES_FILE), &state_values_csv(&grid)?)?;
    write_atomic(&out_dir.join(SIMILARITY_FILE), &similarity_csv(&sims)?)?;
    write_atomic(&out_dir.join(CORRELATIONS_FILE), &correlations_csv(&corrs)?)?;
    let summary = AnalysisSummary { periods: grid.periods.clone(), cells: grid.cell_count(), clusterings, skipped };
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Mean pairwise cosine similarity within and across groups.
pub fn group_similarity(vectors: &[(String, Vec<f64>)], group: &BTreeMap<String, String>) -> (f64, f64) {
    let (mut within, mut across) = (Vec::new(), Vec::new());
    for (i, (a, va)) in vectors.iter().enumerate() {
        for (b, vb) in &vectors[i + 1..] {
            let (Some(ga), Some(gb)) = (group.get(a), group.get(b)) else { continue };
            let c = cosine(va, vb);
            if ga == gb {
                within.push(c);
            } else {
                across.push(c);
            }
        }
    }
    (mean(&within), mean(&across))
}

/// Distinct groups in a participant-to-group map.
pub fn group_names(group: &BTreeMap<String, String>) -> BTreeSet<&str> {
    group.values().map(String::as_str).collect()
}
