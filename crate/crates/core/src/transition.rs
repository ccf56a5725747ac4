//! Transition matrices over latent states and damped PageRank state vectors.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::{csv_bytes, fmt_f64};
use crate::period::{Period, PeriodScheme};
use crate::stats::quantile;
use crate::{Error, Result};

/// Smallest usable proximity threshold; coincident clouds would otherwise
/// yield a zero quantile.
pub const MIN_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionMode {
    #[default]
    Proximity,
    Temporal,
}

impl std::str::FromStr for TransitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proximity" => Ok(Self::Proximity),
            "temporal" => Ok(Self::Temporal),
            other => Err(Error::Config(format!("unknown transition mode `{other}`"))),
        }
    }
}

/// How the proximity threshold is chosen for each participant-period cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Threshold {
    Quantile(f64),
    Absolute(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Quantile(0.10)
    }
}

/// One day of a participant, placed in 2D and labeled with its state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub participant_id: String,
    pub date: NaiveDate,
    pub x: f64,
    pub y: f64,
    pub label: usize,
}

impl LabeledPoint {
    fn distance(&self, other: &LabeledPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub k: usize,
    pub entries: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    /// Row-normalizes raw counts; all-zero rows become uniform.
    pub fn from_counts(counts: &[Vec<f64>]) -> Result<Self> {
        let k = counts.len();
        if k <= 1 {
            return Err(Error::invalid(format!("need k >= 2 states, got {k}")));
        }
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("count matrix is not square"));
        }
        let entries = counts
            .iter()
            .map(|row| {
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    row.iter().map(|c| c / total).collect()
                } else {
                    vec![1.0 / k as f64; k]
                }
            })
            .collect();
        Ok(Self { k, entries })
    }

    pub fn uniform(k: usize) -> Self {
        Self { k, entries: vec![vec![1.0 / k as f64; k]; k] }
    }

    /// Checks squareness, nonnegativity and unit row sums (within 1e-9).
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.entries.len() != self.k || self.entries.iter().any(|r| r.len() != self.k) {
            return Err(Error::invalid("transition matrix must be square with k >= 2"));
        }
        for (i, row) in self.entries.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("row {i} sums to {sum}, not 1")));
            }
        }
        Ok(())
    }
}

/// Raw transition counts.
///
/// Proximity mode counts ordered pairs of distinct days within `threshold`
/// of each other; temporal mode counts pairs of days exactly one date apart.
pub fn transition_counts(points: &[LabeledPoint], k: usize, threshold: f64, mode: TransitionMode) -> Result<Vec<Vec<f64>>> {
    if k <= 1 {
        return Err(Error::invalid(format!("need k >= 2 states, got {k}")));
    }
    if let Some(p) = points.iter().find(|p| p.label >= k) {
        return Err(Error::invalid(format!("label {} out of range for k={k}", p.label)));
    }
    let mut counts = vec![vec![0.0; k]; k];
    match mode {
        TransitionMode::Proximity => {
            if !(threshold > 0.0) {
                return Err(Error::invalid(format!("proximity threshold must be positive, got {threshold}")));
            }
            for (i, p) in points.iter().enumerate() {
                for (j, q) in points.iter().enumerate() {
                    if i != j && p.distance(q) <= threshold {
                        counts[p.label][q.label] += 1.0;
                    }
                }
            }
        }
        TransitionMode::Temporal => {
            let mut ordered: Vec<&LabeledPoint> = points.iter().collect();
            ordered.sort_by_key(|p| p.date);
            for pair in ordered.windows(2) {
                if (pair[1].date - pair[0].date).num_days() == 1 {
                    counts[pair[0].label][pair[1].label] += 1.0;
                }
            }
        }
    }
    Ok(counts)
}

pub fn build_transition_matrix(
    points: &[LabeledPoint],
    k: usize,
    threshold: f64,
    mode: TransitionMode,
) -> Result<TransitionMatrix> {
    TransitionMatrix::from_counts(&transition_counts(points, k, threshold, mode)?)
}

/// The `q`-quantile of all pairwise distances in a cloud, floored at
/// [`MIN_THRESHOLD`]. `None` when there are fewer than two points.
pub fn distance_quantile(points: &[LabeledPoint], q: f64) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let mut d = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for (i, p) in points.iter().enumerate() {
        for other in &points[i + 1..] {
            d.push(p.distance(other));
        }
    }
    Some(quantile(&d, q).max(MIN_THRESHOLD))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRank {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped power iteration `p <- (1 - alpha)/k + alpha T^T p` from the uniform
/// vector, stopping when the L1 step falls below `tol`.
pub fn pagerank(t: &TransitionMatrix, alpha: f64, max_iter: usize, tol: f64) -> Result<PageRank> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("damping factor must lie in (0, 1), got {alpha}")));
    }
    t.validate()?;
    let k = t.k;
    let teleport = (1.0 - alpha) / k as f64;
    let mut p = vec![1.0 / k as f64; k];
    let mut next = vec![0.0; k];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        next.iter_mut().for_each(|v| *v = teleport);
        for (i, row) in t.entries.iter().enumerate() {
            for (j, tij) in row.iter().enumerate() {
                next[j] += alpha * tij * p[i];
            }
        }
        let step: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut p, &mut next);
        iterations += 1;
        if step < tol {
            converged = true;
            break;
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok(PageRank { values: p, iterations, converged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatesConfig {
    pub k: usize,
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub mode: TransitionMode,
    pub threshold: Threshold,
}

impl Default for StatesConfig {
    fn default() -> Self {
        Self {
            k: 5,
            alpha: 0.85,
            max_iter: 100,
            tol: 1e-8,
            mode: TransitionMode::Proximity,
            threshold: Threshold::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub participant_id: String,
    pub period: Period,
    pub values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub n_days: usize,
}

/// A state vector with the matrix and threshold that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub state: StateVector,
    pub threshold: Option<f64>,
    pub matrix: TransitionMatrix,
}

/// State vector of one participant over one period. `points` must be that
/// participant's days inside `period`.
pub fn participant_state_vector(
    participant_id: &str,
    period: Period,
    points: &[LabeledPoint],
    cfg: &StatesConfig,
) -> Result<StateRecord> {
    if points.is_empty() {
        return Err(Error::invalid(format!("{participant_id}: no days in {period}")));
    }
    let threshold = match (cfg.mode, cfg.threshold) {
        (TransitionMode::Temporal, _) => None,
        (TransitionMode::Proximity, Threshold::Absolute(t)) => Some(t),
        (TransitionMode::Proximity, Threshold::Quantile(q)) => distance_quantile(points, q),
    };
    // A lone point has no pairs, so any positive threshold gives the same counts.
    let matrix = build_transition_matrix(points, cfg.k, threshold.unwrap_or(1.0), cfg.mode)?;
    let pr = pagerank(&matrix, cfg.alpha, cfg.max_iter, cfg.tol)?;
    Ok(StateRecord {
        state: StateVector {
            participant_id: participant_id.to_string(),
            period,
            values: pr.values,
            iterations: pr.iterations,
            converged: pr.converged,
            n_days: points.len(),
        },
        threshold,
        matrix,
    })
}

fn by_participant(points: &[LabeledPoint]) -> BTreeMap<&str, Vec<LabeledPoint>> {
    let mut out: BTreeMap<&str, Vec<LabeledPoint>> = BTreeMap::new();
    for p in points {
        out.entry(p.participant_id.as_str()).or_default().push(p.clone());
    }
    for days in out.values_mut() {
        days.sort_by_key(|p| p.date);
    }
    out
}

fn run_jobs(jobs: Vec<(&str, Period, Vec<LabeledPoint>)>, cfg: &StatesConfig) -> Result<Vec<StateRecord>> {
    jobs.into_par_iter()
        .map(|(pid, period, pts)| participant_state_vector(pid, period, &pts, cfg))
        .collect()
}

/// State vectors for every participant and every calendar period in which
/// the participant has at least one day.
pub fn calendar_state_vectors(points: &[LabeledPoint], scheme: &PeriodScheme, cfg: &StatesConfig) -> Result<Vec<StateRecord>> {
    let mut jobs = Vec::new();
    for (pid, days) in by_participant(points) {
        let mut groups: BTreeMap<Period, Vec<LabeledPoint>> = BTreeMap::new();
        for p in days {
            groups.entry(scheme.period_of(p.date)).or_default().push(p);
        }
        jobs.extend(groups.into_iter().map(|(period, pts)| (pid, period, pts)));
    }
    run_jobs(jobs, cfg)
}

/// State vectors over the trailing `windows` (in days) ending at each
/// participant's last observed day.
pub fn trailing_state_vectors(points: &[LabeledPoint], windows: &[u32], cfg: &StatesConfig) -> Result<Vec<StateRecord>> {
    let mut jobs = Vec::new();
    for (pid, days) in by_participant(points) {
        let last = days.last().expect("participant has days").date;
        for &w in windows {
            let period = Period::trailing(last, w);
            let pts: Vec<LabeledPoint> = days.iter().filter(|p| period.contains(p.date)).cloned().collect();
            jobs.push((pid, period, pts));
        }
    }
    run_jobs(jobs, cfg)
}

pub fn states_to_csv(states: &[StateVector]) -> Result<Vec<u8>> {
    let k = states.first().map_or(0, |s| s.values.len());
    if states.iter().any(|s| s.values.len() != k) {
        return Err(Error::invalid("state vectors differ in length"));
    }
    let mut header: Vec<String> = ["participant_id", "period_start", "period_end"].map(String::from).to_vec();
    header.extend((1..=k).map(|i| format!("state{i}")));
    header.extend(["iterations", "converged", "n_days"].map(String::from));
    csv_bytes(
        &header,
        states.iter().map(|s| {
            let mut row = vec![s.participant_id.clone(), s.period.start.to_string(), s.period.end.to_string()];
            row.extend(s.values.iter().map(|v| fmt_f64(*v)));
            row.extend([s.iterations.to_string(), s.converged.to_string(), s.n_days.to_string()]);
            row
        }),
    )
}

pub fn import_states<R: Read>(reader: R) -> Result<Vec<StateVector>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let k = headers.iter().filter(|h| h.starts_with("state")).count();
    let expected = 3 + k + 3;
    if k < 2 || headers.len() != expected || headers.get(0) != Some("participant_id") {
        return Err(Error::parse(1, "unexpected states header"));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let date = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| Error::parse(line, format!("date: {e}")));
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(line, format!("value {s:?}: {e}")));
        let period = Period::new(date(&row[1])?, date(&row[2])?)?;
        let values = (3..3 + k).map(|i| num(&row[i])).collect::<Result<Vec<_>>>()?;
        let int = |s: &str| s.parse::<usize>().map_err(|e| Error::parse(line, format!("{s:?}: {e}")));
        out.push(StateVector {
            participant_id: row[0].to_string(),
            period,
            values,
            iterations: int(&row[3 + k])?,
            converged: row[4 + k]
                .parse()
                .map_err(|e| Error::parse(line, format!("converged: {e}")))?,
            n_days: int(&row[5 + k])?,
        });
    }
    Ok(out)
}
