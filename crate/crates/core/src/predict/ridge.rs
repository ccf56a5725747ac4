//! Closed-form ridge regression with an unpenalized intercept.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pivot threshold, relative to the largest diagonal entry, below which the
/// normal equations are treated as singular.
const SINGULAR_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl RidgeModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

fn column_means(x: &[Vec<f64>], p: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect()
}

/// Minimizes `||y - Xw - b||^2 + lambda ||w||^2`. The intercept is recovered
/// from the column means, so it is not penalized.
pub fn ridge_fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<RidgeModel> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::invalid(format!("ridge needs at least 2 matching rows, got {n} and {}", y.len())));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("ridge penalty must be a finite value >= 0, got {lambda}")));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::invalid("ragged design matrix"));
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    if p == 0 {
        return Ok(RidgeModel { weights: Vec::new(), intercept: y_mean });
    }
    let means = column_means(x, p);
    let xc = DMatrix::from_fn(n, p, |i, j| x[i][j] - means[j]);
    let yc = DVector::from_fn(n, |i, _| y[i] - y_mean);
    let mut a = xc.transpose() * &xc;
    for j in 0..p {
        a[(j, j)] += lambda;
    }
    let rhs = xc.transpose() * yc;
    let max_diag = (0..p).map(|j| a[(j, j)]).fold(0.0, f64::max);
    let chol = a.cholesky().ok_or(Error::Singular)?;
    let l = chol.l_dirty();
    if (0..p).any(|j| l[(j, j)] * l[(j, j)] < SINGULAR_RTOL * max_diag) {
        return Err(Error::Singular);
    }
    let w = chol.solve(&rhs);
    let intercept = y_mean - w.iter().zip(&means).map(|(wj, mj)| wj * mj).sum::<f64>();
    Ok(RidgeModel { weights: w.iter().copied().collect(), intercept })
}

/// Column statistics of a training fold. Columns with (near) zero spread are
/// dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub kept: Vec<usize>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let n = x.len() as f64;
        let p = x.first().map_or(0, Vec::len);
        let mut s = Standardizer { kept: Vec::new(), means: Vec::new(), sds: Vec::new() };
        for j in 0..p {
            let m = x.iter().map(|r| r[j]).sum::<f64>() / n;
            let sd = (x.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n).sqrt();
            if sd > 1e-12 * (1.0 + m.abs()) {
                s.kept.push(j);
                s.means.push(m);
                s.sds.push(sd);
            }
        }
        s
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        self.kept
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(&j, (m, sd))| (row[j] - m) / sd)
            .collect()
    }
}

/// Ridge fitted on standardized training columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedRidge {
    pub scaler: Standardizer,
    pub model: RidgeModel,
}

impl StandardizedRidge {
    pub fn fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<Self> {
        let scaler = Standardizer::fit(x);
        let z: Vec<Vec<f64>> = x.iter().map(|r| scaler.transform(r)).collect();
        let model = ridge_fit(&z, y, lambda)?;
        Ok(Self { scaler, model })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.model.predict(&self.scaler.transform(row))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn exact_line() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..6).map(|i| 2.0 * i as f64).collect();
        let m = ridge_fit(&x, &y, 0.0).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-10);
        assert!(m.intercept.abs() < 1e-10);
    }

    #[test]
    fn huge_penalty_shrinks_to_mean() {
        let mut rng = seeded(2);
        let x: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..10.0)).collect();
        let m = ridge_fit(&x, &y, 1e9).unwrap();
        let norm = m.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-6);
        let y_mean = y.iter().sum::<f64>() / 20.0;
        assert!((m.intercept - y_mean).abs() < 1e-6);
    }

    #[test]
    fn collinear_columns_are_singular_without_penalty() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = (0..5).map(|i| i as f64).collect();
        assert!(matches!(ridge_fit(&x, &y, 0.0), Err(Error::Singular)));
        assert!(ridge_fit(&x, &y, 0.1).is_ok());
        assert!(ridge_fit(&x, &y, -1.0).is_err());
    }

    #[test]
    fn normal_equations_hold_on_standardized_data() {
        let mut rng = seeded(5);
        let x: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] - 2.0 * r[2] + rng.gen_range(-0.5..0.5)).collect();
        let fit = StandardizedRidge::fit(&x, &y, 1.0).unwrap();
        let z: Vec<Vec<f64>> = x.iter().map(|r| fit.scaler.transform(r)).collect();
        let w = &fit.model.weights;
        let b = fit.model.intercept;
        for j in 0..4 {
            let lhs: f64 = z.iter().map(|r| r[j] * r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>()).sum::<f64>() + w[j];
            let rhs: f64 = z.iter().zip(&y).map(|(r, yi)| r[j] * (yi - b)).sum();
            assert!((lhs - rhs).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_columns_are_dropped() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![0.3, i as f64]).collect();
        let s = Standardizer::fit(&x);
        assert_eq!(s.kept, vec![1]);
    }

    proptest! {
        #[test]
        fn shrinkage_is_monotone(seed in 0u64..500, l1 in 0.0f64..5.0, dl in 0.01f64..5.0) {
            let mut rng = seeded(seed);
            let x: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let y: Vec<f64> = x.iter().map(|r| r[0] + r[1] + rng.gen_range(-0.1..0.1)).collect();
            let norm = |l: f64| ridge_fit(&x, &y, l).unwrap().weights.iter().map(|w| w * w).sum::<f64>();
            prop_assert!(norm(l1 + dl) < norm(l1));
        }
    }
}
