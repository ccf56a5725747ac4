//! Leave-one-out evaluation and percentile bootstrap intervals.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ridge::StandardizedRidge;
use crate::rng::stream;
use crate::stats::quantile;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub actual: f64,
    pub predicted: f64,
    pub lambda: f64,
}

impl Fold {
    pub fn error(&self) -> f64 {
        self.predicted - self.actual
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoocvResult {
    pub folds: Vec<Fold>,
    pub mae: f64,
    pub rmse: f64,
}

impl LoocvResult {
    fn from_folds(folds: Vec<Fold>) -> Self {
        let errors: Vec<f64> = folds.iter().map(Fold::error).collect();
        Self { mae: mae(&errors), rmse: rmse(&errors), folds }
    }

    pub fn errors(&self) -> Vec<f64> {
        self.folds.iter().map(Fold::error).collect()
    }
}

pub fn mae(errors: &[f64]) -> f64 {
    errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64
}

pub fn rmse(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

fn without(x: &[Vec<f64>], y: &[f64], skip: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let xs = x.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, r)| r.clone()).collect();
    let ys = y.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, v)| *v).collect();
    (xs, ys)
}

fn check(x: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid("design rows and targets differ in length"));
    }
    if x.len() < 3 {
        return Err(Error::invalid(format!("LOOCV needs at least 3 rows, got {}", x.len())));
    }
    Ok(())
}

/// Holds out each row in turn; scaling and fitting see only the other rows.
pub fn loocv_evaluate(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<LoocvResult> {
    check(x, y)?;
    let folds = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let (xs, ys) = without(x, y, i);
            let fit = StandardizedRidge::fit(&xs, &ys, lambda)?;
            Ok(Fold { index: i, actual: y[i], predicted: fit.predict(&x[i]), lambda })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoocvResult::from_folds(folds))
}

/// Penalty with the lowest inner-LOOCV mean squared error; ties keep the
/// earlier grid entry. Penalties whose fits are singular are skipped.
pub fn select_lambda(x: &[Vec<f64>], y: &[f64], grid: &[f64]) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let mse = match loocv_evaluate(x, y, lambda) {
            Ok(r) => r.rmse * r.rmse,
            Err(Error::Singular) => continue,
            Err(e) => return Err(e),
        };
        if best.map_or(true, |(_, b)| mse < b) {
            best = Some((lambda, mse));
        }
    }
    best.map(|(l, _)| l).ok_or(Error::Singular)
}

/// LOOCV with the penalty chosen afresh inside every outer training fold.
pub fn nested_loocv(x: &[Vec<f64>], y: &[f64], grid: &[f64]) -> Result<LoocvResult> {
    check(x, y)?;
    if grid.is_empty() {
        return Err(Error::Config("empty ridge penalty grid".into()));
    }
    let folds = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let (xs, ys) = without(x, y, i);
            let lambda = if grid.len() == 1 || xs.len() < 3 { grid[0] } else { select_lambda(&xs, &ys, grid)? };
            let fit = StandardizedRidge::fit(&xs, &ys, lambda)?;
            Ok(Fold { index: i, actual: y[i], predicted: fit.predict(&x[i]), lambda })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoocvResult::from_folds(folds))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// 95% percentile-bootstrap intervals for MAE and RMSE of fold errors.
/// Resample `r` draws from its own stream of `seed`, so results do not
/// depend on evaluation order.
pub fn bootstrap_ci(errors: &[f64], n_resamples: usize, seed: u64) -> Result<(Interval, Interval)> {
    if n_resamples == 0 {
        return Err(Error::Config("bootstrap needs at least one resample".into()));
    }
    if errors.len() < 3 {
        return Err(Error::invalid(format!("bootstrap needs at least 3 errors, got {}", errors.len())));
    }
    let n = errors.len();
    let stats: Vec<(f64, f64)> = (0..n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r as u64);
            let sample: Vec<f64> = (0..n).map(|_| errors[rng.gen_range(0..n)]).collect();
            (mae(&sample), rmse(&sample))
        })
        .collect();
    let (maes, rmses): (Vec<f64>, Vec<f64>) = stats.into_iter().unzip();
    let interval = |v: &[f64], point: f64| Interval {
        lo: quantile(v, 0.025).min(point),
        hi: quantile(v, 0.975).max(point),
    };
    Ok((interval(&maes, mae(errors)), interval(&rmses, rmse(errors))))
}
