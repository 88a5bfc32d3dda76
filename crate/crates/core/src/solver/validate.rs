//! Hyperparameter selection over `(lambda, rho)` on a held-out split.

use serde::{Deserialize, Serialize};

use super::{penalty_fit_with, predict_at_observations, FitOptions, SolverConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::err_metric;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationRow {
    pub lambda: f64,
    pub rho: f64,
    /// Mean prediction Err over the validation trajectories (`inf` on failure).
    pub score: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub fraction: f64,
    pub rows: Vec<ValidationRow>,
    pub best: SolverConfig,
}

/// Fit every `(lambda, rho)` pair on a seeded split of the trajectories and
/// score each by predicting the held-out trajectories from their first
/// observation. Ties keep the first pair in grid order.
pub fn grid_search(
    dataset: &Dataset,
    base: &SolverConfig,
    fraction: f64,
    lambdas: &[f64],
    rhos: &[f64],
    opts: FitOptions,
) -> Result<ValidationReport> {
    if lambdas.is_empty() || rhos.is_empty() {
        return Err(Error::Config("grid search needs at least one lambda and one rho".into()));
    }
    let (train, val) = dataset.split(fraction, base.seed)?;
    let mut rows = Vec::new();
    let mut best: Option<(f64, SolverConfig)> = None;
    for &lambda in lambdas {
        for &rho in rhos {
            let cfg = SolverConfig {
                lambda,
                rho,
                ..base.clone()
            };
            let outcome = penalty_fit_with(&train, &cfg, opts).and_then(|fit| {
                let mut total = 0.0;
                for tr in val.trajectories.iter().filter(|t| t.len() >= 2) {
                    let pred = predict_at_observations(&fit.field, tr, cfg.h)?;
                    total += err_metric(&tr.times, &pred, &tr.values)?;
                }
                Ok(total / val.n_trajectories() as f64)
            });
            let (score, error) = match outcome {
                Ok(s) if s.is_finite() => (s, None),
                Ok(s) => (f64::INFINITY, Some(format!("non-finite score {s}"))),
                Err(e) => (f64::INFINITY, Some(e.to_string())),
            };
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, cfg));
            }
            rows.push(ValidationRow {
                lambda,
                rho,
                score,
                error,
            });
        }
    }
    let (score, best) = best.expect("grid is non-empty");
    if !score.is_finite() {
        return Err(Error::Numerical("every grid-search fit failed".into()));
    }
    Ok(ValidationReport { fraction, rows, best })
}
