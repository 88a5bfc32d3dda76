//! Empirical convergence rate of the estimated trajectory in `L^2` as the
//! number of observations grows, on a realizable 1D random-feature system.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{l2_sq_distance, least_squares_line};
use crate::data::{add_noise, Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelSpec};
use crate::ode::{euler_integrate, VectorField};
use crate::rng::{derive_seed, rng_for, Stream};
use crate::solver::{penalty_fit_with, FitOptions, InitKind, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    /// Random features of the ground-truth field (and of the solver).
    pub n_features: usize,
    pub lengthscale: f64,
    /// Standard deviation of the ground-truth coefficients.
    pub coef_scale: f64,
    pub replicates: usize,
    pub sigma: f64,
    /// Samples of the densest trajectory; must be `min_m * 2^i`.
    pub full_m: usize,
    pub min_m: usize,
    /// Observations are `j T / full_m`, `j = 0..full_m`.
    pub horizon: f64,
    pub x0: f64,
    /// Fine Euler steps per observation interval for the ground truth.
    pub substeps: usize,
    /// Solver settings; its kernel is replaced by the ground-truth features.
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            n_features: 200,
            lengthscale: 1.0,
            coef_scale: 1.0,
            replicates: 10,
            sigma: 0.05,
            full_m: 5120,
            min_m: 5,
            horizon: 1.0,
            x0: 0.0,
            substeps: 4,
            solver: SolverConfig {
                h: 1.0 / 256.0,
                rho: 0.5,
                lambda: 1e-6,
                max_iters: 200,
                // central differences of densely sampled noise are O(sigma / dt)
                init: InitKind::ZeroField,
                ..SolverConfig::default()
            },
            seed: 0,
        }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_m < 2 || self.full_m < self.min_m {
            return Err(Error::Config("need 2 <= min_m <= full_m".into()));
        }
        let ratio = self.full_m / self.min_m;
        if self.full_m % self.min_m != 0 || !ratio.is_power_of_two() {
            return Err(Error::Config(format!(
                "full_m ({}) must be min_m ({}) times a power of two",
                self.full_m, self.min_m
            )));
        }
        if self.replicates == 0 || self.substeps == 0 {
            return Err(Error::Config("replicates and substeps must be >= 1".into()));
        }
        if !(self.horizon > 0.0 && self.sigma >= 0.0 && self.lengthscale > 0.0) {
            return Err(Error::Config(
                "horizon and lengthscale must be positive, sigma >= 0".into(),
            ));
        }
        self.solver.validate()
    }

    /// Kernel spec shared by the ground truth and the solver.
    pub fn feature_spec(&self) -> KernelSpec {
        KernelSpec::gaussian_features(self.n_features)
            .with_lengthscale(self.lengthscale)
            .with_seed(derive_seed(self.seed, Stream::Features, 0))
    }

    /// The random ground-truth field.
    pub fn truth_field(&self) -> Result<VectorField> {
        let map = match self.feature_spec().build(1, 1, &[], 0)? {
            Kernel::Explicit(m) => m,
            Kernel::Separable(_) => unreachable!("feature spec builds an explicit kernel"),
        };
        let mut rng = rng_for(self.seed, Stream::Coefficients, 0);
        let n = map.n_features();
        let coefficients = DMatrix::from_fn(n, 1, |_, _| {
            self.coef_scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        Ok(VectorField::Explicit {
            features: map,
            coefficients,
            base: None,
        })
    }

    /// Dense reference solution on the fine grid and the `full_m` clean
    /// observations.
    pub fn ground_truth(&self, field: &VectorField) -> Result<(Trajectory, Trajectory)> {
        let dt = self.horizon / self.full_m as f64;
        let hf = dt / self.substeps as f64;
        let steps = self.full_m * self.substeps;
        let states = euler_integrate(field, &[self.x0], 0.0, hf, steps)?;
        let times: Vec<f64> = (0..=steps).map(|l| l as f64 * hf).collect();
        let obs_times = (0..self.full_m).map(|j| j as f64 * dt).collect();
        let obs_values = (0..self.full_m).map(|j| states[j * self.substeps].clone()).collect();
        Ok((
            Trajectory::new("truth", times, states)?,
            Trajectory::new("0", obs_times, obs_values)?,
        ))
    }

    /// Observation counts, ascending.
    pub fn sample_counts(&self) -> Vec<usize> {
        let mut m = self.min_m;
        let mut out = Vec::new();
        while m <= self.full_m {
            out.push(m);
            m *= 2;
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub m: usize,
    /// Mean over successful replicates (NaN if none succeeded).
    pub mean_l2_sq: f64,
    pub l2_sq: Vec<f64>,
    /// Replicates whose fit diverged; they are excluded from the mean.
    pub n_failed: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub sample_counts: Vec<usize>,
    pub mean_l2_sq: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub rows: Vec<ConvergenceRow>,
    pub config: ConvergenceConfig,
}

impl ConvergenceReport {
    /// CSV with one row per sample count: `m,mean_l2_sq,n_ok,n_failed`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["m", "mean_l2_sq", "n_ok", "n_failed"])?;
        for r in &self.rows {
            w.write_record([
                r.m.to_string(),
                if r.mean_l2_sq.is_finite() { r.mean_l2_sq.to_string() } else { String::new() },
                r.l2_sq.len().to_string(),
                r.n_failed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Squared `L^2` error over `[0, T]` of the Euler orbit of a fit on `data`.
fn fit_error(data: &Dataset, solver: &SolverConfig, truth: &Trajectory, horizon: f64, opts: FitOptions) -> Result<f64> {
    let fit = penalty_fit_with(data, solver, opts)?;
    let z0 = &fit.latents[0][0];
    let h = solver.h;
    let steps = (horizon / h - 1e-9).ceil() as usize;
    let states = euler_integrate(&fit.field, z0, 0.0, h, steps)?;
    let times = (0..=steps).map(|l| l as f64 * h).collect();
    let xhat = Trajectory::new("estimate", times, states)?;
    l2_sq_distance(&xhat, truth, 0.0, horizon)
}

/// Fit noisy copies of one realizable trajectory at decreasing sparsity and
/// regress `ln(mean L2^2)` on `ln m`.
pub fn convergence_experiment(config: &ConvergenceConfig, opts: FitOptions) -> Result<ConvergenceReport> {
    config.validate()?;
    let field = config.truth_field()?;
    let (truth, clean) = config.ground_truth(&field)?;
    let clean = Dataset::new(vec![clean])?.with_horizon(config.horizon)?;
    let solver = SolverConfig {
        kernel: config.feature_spec(),
        ..config.solver.clone()
    };
    let noisy: Vec<Dataset> = (0..config.replicates)
        .map(|r| add_noise(&clean, config.sigma, derive_seed(config.seed, Stream::Noise, r as u64)))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for m in config.sample_counts() {
        let step = config.full_m / m;
        let mut l2 = Vec::new();
        let mut n_failed = 0;
        for data in &noisy {
            let sub = data.map_trajectories(|t| t.subsample(step))?;
            match fit_error(&sub, &solver, &truth, config.horizon, opts) {
                Ok(e) if e.is_finite() => l2.push(e),
                Ok(_) => n_failed += 1,
                Err(e) => {
                    log::warn!("convergence fit with m = {m} excluded: {e}");
                    n_failed += 1;
                }
            }
        }
        let mean = if l2.is_empty() {
            f64::NAN
        } else {
            l2.iter().sum::<f64>() / l2.len() as f64
        };
        log::info!("m = {m}: mean L2^2 = {mean:.4e} ({n_failed} failed)");
        rows.push(ConvergenceRow {
            m,
            mean_l2_sq: mean,
            l2_sq: l2,
            n_failed,
        });
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mean_l2_sq.is_finite() && r.mean_l2_sq > 0.0)
        .map(|r| ((r.m as f64).ln(), r.mean_l2_sq.ln()))
        .collect();
    let (slope, intercept) = least_squares_line(&points).ok_or_else(|| {
        Error::InsufficientData("fewer than two sample counts produced a usable error".into())
    })?;
    Ok(ConvergenceReport {
        sample_counts: rows.iter().map(|r| r.m).collect(),
        mean_l2_sq: rows.iter().map(|r| r.mean_l2_sq).collect(),
        slope,
        intercept,
        rows,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_are_powers_of_two() {
        let c = ConvergenceConfig::default();
        assert_eq!(c.sample_counts(), vec![5, 10, 20, 40, 80, 160, 320, 640, 1280, 2560, 5120]);
        let bad = ConvergenceConfig {
            full_m: 30,
            ..ConvergenceConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn two_counts_give_two_point_slope() {
        let cfg = ConvergenceConfig {
            n_features: 20,
            replicates: 1,
            full_m: 20,
            min_m: 10,
            solver: SolverConfig {
                h: 1.0 / 20.0,
                max_iters: 5,
                ..ConvergenceConfig::default().solver
            },
            ..ConvergenceConfig::default()
        };
        let rep = convergence_experiment(&cfg, FitOptions::default()).unwrap();
        assert_eq!(rep.sample_counts, vec![10, 20]);
        let q = (rep.mean_l2_sq[1].ln() - rep.mean_l2_sq[0].ln()) / (20f64.ln() - 10f64.ln());
        assert!((rep.slope - q).abs() < 1e-12);
    }
}
