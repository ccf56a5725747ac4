//! Exact t-SNE to two dimensions.

use std::io::Read;

use chrono::NaiveDate;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingVector;
use crate::io::{csv_bytes, fmt_f64};
use crate::rng::seeded;
use crate::{DayKey, Error, Result};

const BISECTION_MAX_ITER: usize = 256;
const ENTROPY_TOL: f64 = 1e-10;
const DUPLICATE_DISTANCE: f64 = 1e-12;
const MOMENTUM_SWITCH: usize = 250;
const INIT_SD: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    /// Spacing of divergence checkpoints in the trace.
    pub kl_every: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            kl_every: 50,
            seed: 0,
        }
    }
}

impl TsneConfig {
    /// Checks the parameters against a corpus of `n` points.
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.perplexity > 1.0) {
            return Err(Error::Config(format!("perplexity must exceed 1, got {}", self.perplexity)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.kl_every == 0 {
            return Err(Error::Config("kl_every must be at least 1".into()));
        }
        if !(self.early_exaggeration >= 1.0) {
            return Err(Error::Config("early exaggeration must be at least 1".into()));
        }
        if n < 4 {
            return Err(Error::invalid(format!("t-SNE needs at least 4 points, got {n}")));
        }
        if self.perplexity >= (n - 1) as f64 / 3.0 {
            return Err(Error::invalid(format!(
                "perplexity {} is infeasible for {n} points (must be below {})",
                self.perplexity,
                (n - 1) as f64 / 3.0
            )));
        }
        Ok(())
    }
}

/// Dense row-major matrix of squared Euclidean distances.
pub fn squared_distances(x: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = x.len();
    let dim = x.first().map_or(0, Vec::len);
    if x.iter().any(|v| v.len() != dim) {
        return Err(Error::invalid("points differ in dimension"));
    }
    let mut d2 = vec![0.0; n * n];
    d2.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for (j, out) in row.iter_mut().enumerate() {
            *out = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    });
    Ok(d2)
}

/// Shannon entropy (nats) of a conditional row, skipping the diagonal.
pub fn row_entropy(row: &[f64], i: usize) -> f64 {
    row.iter()
        .enumerate()
        .filter(|&(j, &p)| j != i && p > 0.0)
        .map(|(_, &p)| -p * p.ln())
        .sum()
}

fn calibrate_row(d2: &[f64], i: usize, target: f64, out: &mut [f64]) -> Result<()> {
    let dist = |j: usize| if d2[j] == 0.0 { DUPLICATE_DISTANCE } else { d2[j] };
    let others = || (0..d2.len()).filter(move |&j| j != i);
    let min = others().map(dist).fold(f64::INFINITY, f64::min);
    let max = others().map(dist).fold(f64::NEG_INFINITY, f64::max);
    let m = (d2.len() - 1) as f64;
    if max == min {
        for j in others() {
            out[j] = 1.0 / m;
        }
        out[i] = 0.0;
        return Ok(());
    }
    let (mut beta, mut lo, mut hi) = (1.0 / (max - min), 0.0, f64::INFINITY);
    for _ in 0..BISECTION_MAX_ITER {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for j in others() {
            let s = dist(j) - min;
            let w = (-beta * s).exp();
            out[j] = w;
            sum += w;
            weighted += w * s;
        }
        let entropy = sum.ln() + beta * weighted / sum;
        if (entropy - target).abs() < ENTROPY_TOL {
            out[i] = 0.0;
            out.iter_mut().for_each(|p| *p /= sum);
            return Ok(());
        }
        if entropy > target {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    Err(Error::Bisection { row: i })
}

/// Conditional affinities `p(j|i)`, each row calibrated by bisection on the
/// Gaussian precision so that its perplexity matches `perplexity`.
pub fn calibrate_conditional(d2: &[f64], n: usize, perplexity: f64) -> Result<Vec<f64>> {
    if n < 2 || d2.len() != n * n {
        return Err(Error::invalid("distance matrix must be square with at least 2 rows"));
    }
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    let outcomes: Vec<Result<()>> = cond
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, row)| calibrate_row(&d2[i * n..(i + 1) * n], i, target, row))
        .collect();
    // Report the lowest failing row regardless of scheduling.
    outcomes.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(cond)
}

/// `(P_cond + P_cond^T) / (2n)`, in place.
pub fn symmetrize(mut cond: Vec<f64>, n: usize) -> Vec<f64> {
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        cond[i * n + i] = 0.0;
        for j in i + 1..n {
            let v = (cond[i * n + j] + cond[j * n + i]) * scale;
            cond[i * n + j] = v;
            cond[j * n + i] = v;
        }
    }
    cond
}

/// Joint affinity matrix `P` from squared distances.
pub fn calibrate_affinities(d2: &[f64], n: usize, perplexity: f64) -> Result<Vec<f64>> {
    if n < 4 {
        return Err(Error::invalid(format!("need at least 4 points, got {n}")));
    }
    Ok(symmetrize(calibrate_conditional(d2, n, perplexity)?, n))
}

/// Student-t joint similarities `Q` of a layout.
pub fn joint_q(y: &[[f64; 2]]) -> Vec<f64> {
    let n = y.len();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                q[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
            }
        }
    }
    let z: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= z);
    q
}

fn p_log_p(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum()
}

const LANES: usize = 4;

/// Row `i` sums over all `j`, including `j == i`, which adds exactly 1 to the
/// normalizer and nothing else: `[z, attract_x, attract_y, repel_x, repel_y]`.
/// Four independent lanes keep the loop vectorizable and the summation order
/// fixed.
fn row_gradient_terms(p_row: &[f64], xs: &[f64], ys: &[f64], i: usize) -> [f64; 5] {
    let (xi, yi) = (xs[i], ys[i]);
    let mut acc = [[0.0f64; LANES]; 5];
    let body = p_row.len() / LANES * LANES;
    for ((pp, xx), yy) in p_row[..body].chunks_exact(LANES).zip(xs[..body].chunks_exact(LANES)).zip(ys[..body].chunks_exact(LANES)) {
        for l in 0..LANES {
            let dx = xi - xx[l];
            let dy = yi - yy[l];
            let num = 1.0 / (1.0 + dx * dx + dy * dy);
            let w = pp[l] * num;
            let r = num * num;
            acc[0][l] += num;
            acc[1][l] += w * dx;
            acc[2][l] += w * dy;
            acc[3][l] += r * dx;
            acc[4][l] += r * dy;
        }
    }
    let mut out = acc.map(|a| a.iter().sum::<f64>());
    for j in body..p_row.len() {
        let dx = xi - xs[j];
        let dy = yi - ys[j];
        let num = 1.0 / (1.0 + dx * dx + dy * dy);
        out[0] += num;
        out[1] += p_row[j] * num * dx;
        out[2] += p_row[j] * num * dy;
        out[3] += num * num * dx;
        out[4] += num * num * dy;
    }
    out[0] -= 1.0;
    out
}

fn split(y: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    (y.iter().map(|v| v[0]).collect(), y.iter().map(|v| v[1]).collect())
}

/// Gradient with `P` scaled by `exaggeration`; returns the normalizer `Z`.
fn gradient_into(p: &[f64], y: &[[f64; 2]], exaggeration: f64, grad: &mut [[f64; 2]]) -> f64 {
    let n = y.len();
    let (xs, ys) = split(y);
    let terms: Vec<[f64; 5]> = (0..n)
        .into_par_iter()
        .map(|i| row_gradient_terms(&p[i * n..(i + 1) * n], &xs, &ys, i))
        .collect();
    let z: f64 = terms.iter().map(|t| t[0]).sum();
    for (g, t) in grad.iter_mut().zip(&terms) {
        g[0] = 4.0 * (exaggeration * t[1] - t[3] / z);
        g[1] = 4.0 * (exaggeration * t[2] - t[4] / z);
    }
    z
}

/// `KL(P || Q) = sum P ln P - sum P ln(num) + ln Z`.
fn kl_divergence(p: &[f64], plogp: f64, y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let rows: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (mut z, mut p_log_denominator) = (0.0, 0.0);
            for (j, (pij, yj)) in p[i * n..(i + 1) * n].iter().zip(y).enumerate() {
                if j == i {
                    continue;
                }
                let dx = y[i][0] - yj[0];
                let dy = y[i][1] - yj[1];
                let sq = dx * dx + dy * dy;
                z += 1.0 / (1.0 + sq);
                if *pij > 0.0 {
                    p_log_denominator += pij * sq.ln_1p();
                }
            }
            (z, p_log_denominator)
        })
        .collect();
    let z: f64 = rows.iter().map(|r| r.0).sum();
    let pl: f64 = rows.iter().map(|r| r.1).sum();
    plogp + pl + z.ln()
}

/// `KL(P || Q)` of the layout and its gradient with `P` scaled by
/// `exaggeration` (the returned divergence always uses the unscaled `P`).
pub fn kl_gradient(p: &[f64], y: &[[f64; 2]], exaggeration: f64) -> (f64, Vec<[f64; 2]>) {
    let mut grad = vec![[0.0; 2]; y.len()];
    gradient_into(p, y, exaggeration, &mut grad);
    (kl_divergence(p, p_log_p(p), y), grad)
}

/// Divergence recorded after `iteration` updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlPoint {
    pub iteration: usize,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub layout: Vec<[f64; 2]>,
    /// Checkpoints at iteration 0, every `kl_every` updates, the end of early
    /// exaggeration and the final iteration.
    pub kl_trace: Vec<KlPoint>,
}

impl TsneResult {
    pub fn kl_at(&self, iteration: usize) -> Option<f64> {
        self.kl_trace.iter().find(|k| k.iteration == iteration).map(|k| k.kl)
    }

    pub fn final_kl(&self) -> f64 {
        self.kl_trace.last().map_or(f64::NAN, |k| k.kl)
    }
}

/// The seeded `N(0, 1e-4^2)` starting layout.
pub fn initial_layout(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = seeded(seed);
    let normal = Normal::new(0.0, INIT_SD).expect("valid normal");
    (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect()
}

pub fn tsne(x: &[Vec<f64>], cfg: &TsneConfig) -> Result<TsneResult> {
    let n = x.len();
    cfg.validate(n)?;
    let p = {
        let d2 = squared_distances(x)?;
        calibrate_affinities(&d2, n, cfg.perplexity)?
    };
    tsne_from_affinities(&p, cfg)
}

/// Gradient descent on a precomputed joint `P`.
pub fn tsne_from_affinities(p: &[f64], cfg: &TsneConfig) -> Result<TsneResult> {
    let n = (p.len() as f64).sqrt() as usize;
    if n * n != p.len() {
        return Err(Error::invalid("affinity matrix is not square"));
    }
    if cfg.kl_every == 0 {
        return Err(Error::Config("kl_every must be at least 1".into()));
    }
    let plogp = p_log_p(p);
    let mut y = initial_layout(n, cfg.seed);
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut grad = vec![[0.0; 2]; n];
    let mut trace = Vec::new();
    for t in 0..=cfg.iterations {
        if t % cfg.kl_every == 0 || t == cfg.exaggeration_iters || t == cfg.iterations {
            let kl = kl_divergence(p, plogp, &y);
            if !kl.is_finite() {
                return Err(Error::NonFiniteGradient { iteration: t });
            }
            trace.push(KlPoint { iteration: t, kl });
        }
        if t == cfg.iterations {
            break;
        }
        let exaggeration = if t < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        gradient_into(p, &y, exaggeration, &mut grad);
        if grad.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { iteration: t });
        }
        let momentum = if t < MOMENTUM_SWITCH { 0.5 } else { 0.8 };
        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d];
                let gain = &mut gains[i][d];
                *gain = if (g > 0.0) != (update[i][d] > 0.0) { *gain + 0.2 } else { *gain * 0.8 };
                *gain = gain.max(MIN_GAIN);
                update[i][d] = momentum * update[i][d] - cfg.learning_rate * *gain * g;
                y[i][d] += update[i][d];
            }
        }
        let cx = y.iter().map(|v| v[0]).sum::<f64>() / n as f64;
        let cy = y.iter().map(|v| v[1]).sum::<f64>() / n as f64;
        y.iter_mut().for_each(|v| {
            v[0] -= cx;
            v[1] -= cy;
        });
    }
    Ok(TsneResult { layout: y, kl_trace: trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub participant_id: String,
    pub date: NaiveDate,
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub fn key(&self) -> DayKey {
        DayKey::new(self.participant_id.clone(), self.date)
    }

    pub fn coords(&self) -> Vec<f64> {
        vec![self.x, self.y]
    }
}

/// Runs t-SNE over an embedding corpus and labels the layout.
pub fn reduce_embeddings(vectors: &[EmbeddingVector], cfg: &TsneConfig) -> Result<(Vec<Point2D>, Vec<KlPoint>)> {
    let x: Vec<Vec<f64>> = vectors.iter().map(|v| v.values.clone()).collect();
    let res = tsne(&x, cfg)?;
    let points = vectors
        .iter()
        .zip(res.layout)
        .map(|(v, [x, y])| Point2D { participant_id: v.participant_id.clone(), date: v.date, x, y })
        .collect();
    Ok((points, res.kl_trace))
}

pub fn points_to_csv(points: &[Point2D]) -> Result<Vec<u8>> {
    let header: Vec<String> = ["participant_id", "date", "x", "y"].map(String::from).to_vec();
    csv_bytes(
        &header,
        points
            .iter()
            .map(|p| vec![p.participant_id.clone(), p.date.to_string(), fmt_f64(p.x), fmt_f64(p.y)]),
    )
}

pub fn import_points<R: Read>(reader: R) -> Result<Vec<Point2D>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<Point2D>() {
        let p = row?;
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(Error::invalid(format!("{}: non-finite coordinate", p.key())));
        }
        out.push(p);
    }
    Ok(out)
}

pub fn kl_trace_to_csv(trace: &[KlPoint]) -> Result<Vec<u8>> {
    let header = vec!["iteration".to_string(), "kl".to_string()];
    csv_bytes(&header, trace.iter().map(|k| vec![k.iteration.to_string(), fmt_f64(k.kl)]))
}
