//! k-means with k-means++ seeding, silhouette scoring and silhouette-based
//! choice of k. Distances are Euclidean.

use std::collections::HashMap;
use std::ops::RangeInclusive;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::csv_bytes;
use crate::rng::{derive_seed, stream};
use crate::{DayKey, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once the summed squared centroid movement drops to this value.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iter: 300,
            tol: 1e-6,
            restarts: 10,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::invalid("points must be non-empty vectors"));
    }
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("points have inconsistent dimensions"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("points contain non-finite values"));
    }
    Ok(dim)
}

fn kmeans_pp<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::Degenerate(format!(
                "fewer than {k} distinct points"
            )));
        }
        let mut target = rng.gen::<f64>() * total;
        let mut chosen = d2.len() - 1;
        for (i, w) in d2.iter().enumerate() {
            if *w > 0.0 {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
        }
        while d2[chosen] <= 0.0 {
            chosen -= 1;
        }
        let c = points[chosen].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    Ok(centroids)
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn means(points: &[Vec<f64>], labels: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    (sums, counts)
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, cfg: &KMeansConfig, dim: usize) -> ClusterModel {
    let k = cfg.k;
    let mut labels = vec![usize::MAX; points.len()];
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let assigned: Vec<(usize, f64)> = points.iter().map(|p| nearest(p, &centroids)).collect();
        let changed = assigned.iter().zip(&labels).any(|((l, _), old)| l != old);
        for (slot, (l, _)) in labels.iter_mut().zip(&assigned) {
            *slot = *l;
        }
        let (mut next, mut counts) = means(points, &labels, k, dim);
        // Empty clusters restart at the point farthest from its centroid.
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let (far, _) = points
                .iter()
                .zip(&labels)
                .enumerate()
                .filter(|(_, (_, &l))| counts[l] > 1)
                .map(|(i, (p, &l))| (i, sq_dist(p, &next[l])))
                .fold((usize::MAX, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            let old = labels[far];
            labels[far] = empty;
            counts[old] -= 1;
            counts[empty] += 1;
            let (m, c) = means(points, &labels, k, dim);
            next = m;
            counts = c;
        }
        let inertia: f64 = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &next[l])).sum();
        if let Some(&prev) = trace.last() {
            debug_assert!(
                inertia <= prev + 1e-9 * prev.max(1.0),
                "Lloyd inertia increased: {prev} -> {inertia}"
            );
        }
        trace.push(inertia);
        let shift: f64 = centroids.iter().zip(&next).map(|(a, b)| sq_dist(a, b)).sum();
        centroids = next;
        if !changed || shift <= cfg.tol || iterations >= cfg.max_iter {
            return ClusterModel {
                k,
                centroids,
                assignments: labels,
                inertia,
                iterations,
                inertia_trace: trace,
            };
        }
    }
}

/// Best-of-`restarts` k-means. Restart `r` draws from stream `r` of the seed,
/// so the result does not depend on how restarts are scheduled.
pub fn kmeans(points: &[Vec<f64>], cfg: &KMeansConfig) -> Result<ClusterModel> {
    if cfg.k < 2 {
        return Err(Error::invalid("k-means needs k >= 2"));
    }
    if points.len() < cfg.k {
        return Err(Error::invalid(format!(
            "{} points cannot form {} clusters",
            points.len(),
            cfg.k
        )));
    }
    let dim = check_points(points)?;
    if points.iter().all(|p| p == &points[0]) {
        return Err(Error::Degenerate("all points are identical".into()));
    }
    let restarts = cfg.restarts.max(1);
    let runs: Vec<Result<ClusterModel>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(cfg.seed, r as u64);
            let init = kmeans_pp(points, cfg.k, &mut rng)?;
            Ok(lloyd(points, init, cfg, dim))
        })
        .collect();
    let mut best: Option<ClusterModel> = None;
    for run in runs {
        let model = run?;
        if best.as_ref().map_or(true, |b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn label_counts(labels: &[usize]) -> HashMap<usize, usize> {
    let mut counts = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    counts
}

/// Per-point silhouette values. Points in singleton clusters score 0, as do
/// points with `a = b = 0`.
pub fn silhouette_samples(points: &[Vec<f64>], labels: &[usize]) -> Result<Vec<f64>> {
    if points.len() != labels.len() {
        return Err(Error::invalid("one label per point required"));
    }
    check_points(points)?;
    let counts = label_counts(labels);
    if counts.len() < 2 {
        return Err(Error::invalid("silhouette needs at least two clusters"));
    }
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    Ok((0..points.len())
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if counts[&own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; n_labels];
            for (j, p) in points.iter().enumerate() {
                if j != i {
                    sums[labels[j]] += sq_dist(&points[i], p).sqrt();
                }
            }
            let a = sums[own] / (counts[&own] - 1) as f64;
            let b = counts
                .iter()
                .filter(|(l, _)| **l != own)
                .map(|(l, c)| sums[*l] / *c as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect())
}

/// Mean silhouette over all points, in [-1, 1].
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let s = silhouette_samples(points, labels)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub best_k: usize,
    /// `(k, silhouette)` for every k tried.
    pub scores: Vec<(usize, f64)>,
    pub model: ClusterModel,
}

/// Picks k by maximum silhouette; ties go to the smaller k.
pub fn select_k(points: &[Vec<f64>], k_range: RangeInclusive<usize>, base: &KMeansConfig) -> Result<KSelection> {
    if k_range.is_empty() {
        return Err(Error::invalid("empty k range"));
    }
    if *k_range.start() < 2 || *k_range.end() + 1 > points.len() {
        return Err(Error::invalid(format!(
            "k range {}..={} must lie within [2, {}]",
            k_range.start(),
            k_range.end(),
            points.len().saturating_sub(1)
        )));
    }
    let mut scores = Vec::new();
    let mut best: Option<(usize, f64, ClusterModel)> = None;
    for k in k_range {
        let cfg = KMeansConfig {
            k,
            seed: derive_seed(base.seed, &format!("k={k}")),
            ..*base
        };
        let model = kmeans(points, &cfg)?;
        let score = silhouette(points, &model.assignments)?;
        scores.push((k, score));
        if best.as_ref().map_or(true, |(_, s, _)| score > *s) {
            best = Some((k, score, model));
        }
    }
    let (best_k, _, model) = best.expect("non-empty range");
    Ok(KSelection { best_k, scores, model })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as f64;
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let mut table: HashMap<(usize, usize), f64> = HashMap::new();
    let mut rows: HashMap<usize, f64> = HashMap::new();
    let mut cols: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_rows * sum_cols / choose2(n);
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max_index - expected)
}

/// Cluster assignment of one participant-day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayLabel {
    pub participant_id: String,
    pub date: chrono::NaiveDate,
    pub cluster: usize,
}

impl DayLabel {
    pub fn key(&self) -> DayKey {
        DayKey::new(self.participant_id.clone(), self.date)
    }
}

pub fn labels_to_csv(labels: &[DayLabel]) -> Result<Vec<u8>> {
    let header = ["participant_id", "date", "cluster"].map(String::from);
    csv_bytes(&header, labels.iter().map(|l| vec![l.participant_id.clone(), l.date.to_string(), l.cluster.to_string()]))
}

pub fn import_labels<R: std::io::Read>(reader: R) -> Result<Vec<DayLabel>> {
    let mut rdr = csv::Reader::from_reader(reader);
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<DayLabel>, _>>()?)
}
