//! Ridge regression of clinical scores on behavioural feature sets, evaluated
//! by leave-one-participant-out cross-validation with bootstrap intervals.

pub mod features;
pub mod loocv;
pub mod ridge;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use features::{assemble_features, DesignMatrix, FeatureInputs, FeatureKind, FeatureSetSpec, Target};
pub use loocv::{bootstrap_ci, loocv_evaluate, nested_loocv, Fold, Interval, LoocvResult};
pub use ridge::{ridge_fit, RidgeModel, StandardizedRidge};

use crate::io::{csv_bytes, fmt_f64, write_atomic, write_json};
use crate::rng::derive_seed;
use crate::{Error, Result};

pub const WINDOWS: [u32; 5] = [7, 15, 30, 90, 180];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    pub sets: Vec<String>,
    pub targets: Vec<String>,
    pub windows: Vec<u32>,
    pub lambdas: Vec<f64>,
    pub bootstrap_resamples: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            sets: ["baseline", "proportion_baseline", "random_word", "state", "characteristics", "state+characteristics"]
                .map(String::from)
                .to_vec(),
            targets: Target::ALL.iter().map(|t| t.name().to_string()).collect(),
            windows: WINDOWS.to_vec(),
            lambdas: vec![0.01, 0.1, 1.0, 10.0],
            bootstrap_resamples: 1000,
        }
    }
}

impl PredictConfig {
    pub fn parsed_sets(&self) -> Result<Vec<FeatureSetSpec>> {
        self.sets.iter().map(|s| s.parse()).collect()
    }

    pub fn parsed_targets(&self) -> Result<Vec<Target>> {
        self.targets.iter().map(|s| s.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sets.is_empty() || self.targets.is_empty() || self.windows.is_empty() {
            return Err(Error::Config("predict needs at least one feature set, target and window".into()));
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config("ridge penalties must be finite and non-negative".into()));
        }
        if self.windows.contains(&0) {
            return Err(Error::Config("analysis windows must be at least one day".into()));
        }
        if self.bootstrap_resamples == 0 {
            return Err(Error::Config("bootstrap_resamples must be positive".into()));
        }
        self.parsed_sets()?;
        self.parsed_targets()?;
        Ok(())
    }
}

/// One row of the prediction table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub feature_set: String,
    pub target: String,
    pub window_days: u32,
    pub mae: f64,
    pub mae_lo: f64,
    pub mae_hi: f64,
    pub rmse: f64,
    pub rmse_lo: f64,
    pub rmse_hi: f64,
    pub n: usize,
}

/// Full detail behind a report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub row: ReportRow,
    pub participants: Vec<String>,
    pub folds: Vec<Fold>,
    pub excluded: Vec<(String, String)>,
    pub dropped_columns: Vec<String>,
    /// Penalty chosen by LOOCV on the whole cohort for the reported
    /// coefficients.
    pub lambda: f64,
    /// Standardized coefficients of the whole-cohort fit, by column.
    pub coefficients: Vec<(String, f64)>,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub feature_set: String,
    pub target: String,
    pub window_days: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub experiments: Vec<Experiment>,
    pub skipped: Vec<Skipped>,
}

impl PredictionReport {
    pub fn rows(&self) -> Vec<&ReportRow> {
        self.experiments.iter().map(|e| &e.row).collect()
    }

    pub fn find(&self, feature_set: &str, target: &str, window: u32) -> Option<&Experiment> {
        self.experiments
            .iter()
            .find(|e| e.row.feature_set == feature_set && e.row.target == target && e.row.window_days == window)
    }
}

pub const REPORT_HEADER: [&str; 11] =
    ["model", "feature_set", "target", "window_days", "mae", "mae_lo", "mae_hi", "rmse", "rmse_lo", "rmse_hi", "n"];

pub fn report_csv(report: &PredictionReport) -> Result<Vec<u8>> {
    csv_bytes(
        &REPORT_HEADER.map(String::from),
        report.rows().into_iter().map(|r| {
            vec![
                r.model.clone(),
                r.feature_set.clone(),
                r.target.clone(),
                r.window_days.to_string(),
                fmt_f64(r.mae),
                fmt_f64(r.mae_lo),
                fmt_f64(r.mae_hi),
                fmt_f64(r.rmse),
                fmt_f64(r.rmse_lo),
                fmt_f64(r.rmse_hi),
                r.n.to_string(),
            ]
        }),
    )
}

pub fn write_report(dir: &Path, report: &PredictionReport) -> Result<()> {
    write_atomic(&dir.join("report.csv"), &report_csv(report)?)?;
    write_json(&dir.join("report.json"), report)
}

/// Feature-set variants actually run for a target: delta targets with
/// characteristics are run with and without the current scores.
pub fn variants(spec: &FeatureSetSpec, target: Target) -> Vec<FeatureSetSpec> {
    let mut base = spec.clone();
    base.include_current_scores = false;
    if target.is_delta() && spec.has(FeatureKind::Characteristics) {
        let mut with = base.clone();
        with.include_current_scores = true;
        vec![base, with]
    } else {
        vec![base]
    }
}

/// Evaluates one (feature set, target, window) cell.
pub fn run_experiment(
    inputs: &FeatureInputs,
    spec: &FeatureSetSpec,
    target: Target,
    window: u32,
    cfg: &PredictConfig,
    seed: u64,
) -> Result<Experiment> {
    let dm = assemble_features(inputs, spec, target, window)?;
    let label = spec.to_string();
    let result = nested_loocv(&dm.x, &dm.y, &cfg.lambdas)?;
    let errors = result.errors();
    let boot_seed = derive_seed(seed, &format!("bootstrap/{label}/{}/{window}", target.name()));
    let (mae_ci, rmse_ci) = bootstrap_ci(&errors, cfg.bootstrap_resamples, boot_seed)?;
    let lambda = if cfg.lambdas.len() == 1 { cfg.lambdas[0] } else { loocv::select_lambda(&dm.x, &dm.y, &cfg.lambdas)? };
    let full = StandardizedRidge::fit(&dm.x, &dm.y, lambda)?;
    let kept: Vec<String> = full.scaler.kept.iter().map(|&j| dm.columns[j].clone()).collect();
    let dropped_columns = dm.columns.iter().filter(|c| !kept.contains(c)).cloned().collect();
    Ok(Experiment {
        row: ReportRow {
            model: "ridge".into(),
            feature_set: label,
            target: target.name().into(),
            window_days: window,
            mae: result.mae,
            mae_lo: mae_ci.lo,
            mae_hi: mae_ci.hi,
            rmse: result.rmse,
            rmse_lo: rmse_ci.lo,
            rmse_hi: rmse_ci.hi,
            n: dm.participants.len(),
        },
        participants: dm.participants,
        folds: result.folds,
        excluded: dm.excluded,
        dropped_columns,
        lambda,
        coefficients: kept.into_iter().zip(full.model.weights).collect(),
        intercept: full.model.intercept,
    })
}

/// Every feature set against every target and window. Cells that cannot be
/// evaluated (too few participants, singular fits) are listed as skipped.
pub fn run_experiment_grid(inputs: &FeatureInputs, cfg: &PredictConfig, seed: u64) -> Result<PredictionReport> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for spec in cfg.parsed_sets()? {
        for target in cfg.parsed_targets()? {
            for variant in variants(&spec, target) {
                for &w in &cfg.windows {
                    cells.push((variant.clone(), target, w));
                }
            }
        }
    }
    let outcomes: Vec<_> = cells
        .par_iter()
        .map(|(spec, target, w)| (spec, target, w, run_experiment(inputs, spec, *target, *w, cfg, seed)))
        .collect();
    let mut report = PredictionReport { experiments: Vec::new(), skipped: Vec::new() };
    for (spec, target, w, outcome) in outcomes {
        match outcome {
            Ok(e) => {
                debug_assert!(e.row.mae <= e.row.rmse + 1e-12);
                report.experiments.push(e);
            }
            Err(e @ (Error::InvalidInput(_) | Error::Singular)) => report.skipped.push(Skipped {
                feature_set: spec.to_string(),
                target: target.name().into(),
                window_days: *w,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_targets_get_both_variants() {
        let s: FeatureSetSpec = "state+characteristics".parse().unwrap();
        assert_eq!(variants(&s, Target::Mmse).len(), 1);
        let v = variants(&s, Target::DeltaMmse);
        assert_eq!(v.len(), 2);
        assert_eq!(v[1].to_string(), "state+characteristics+current_scores");
        assert_eq!(variants(&"state".parse().unwrap(), Target::DeltaAdascog).len(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(PredictConfig::default().validate().is_ok());
        assert!(PredictConfig { lambdas: vec![-1.0], ..Default::default() }.validate().is_err());
        assert!(PredictConfig { sets: vec!["nope".into()], ..Default::default() }.validate().is_err());
        assert!(PredictConfig { windows: vec![0], ..Default::default() }.validate().is_err());
    }
}
