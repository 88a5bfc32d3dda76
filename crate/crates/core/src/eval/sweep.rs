//! Noise-sweep benchmarks on the reference systems.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{err_metric, mean_sem};
use crate::data::{add_noise, Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::ode::{simulate_dataset, AnalyticSystem, VectorField};
use crate::rng::{derive_seed, rng_for, Stream};
use crate::solver::{penalty_fit_with, predict_at_observations, FitOptions, InitKind, SolverConfig, StopReason};

/// Train/test topology, noise levels and solver settings of one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub system: AnalyticSystem,
    pub sigmas: Vec<f64>,
    pub replicates: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_obs: usize,
    pub dt_obs: f64,
    /// Fine Euler steps per observation interval for ground truth.
    pub substeps: usize,
    /// Initial conditions are uniform in the box `[ic_low, ic_high]`.
    pub ic_low: Vec<f64>,
    pub ic_high: Vec<f64>,
    /// Err is measured only up to this long after the first observation.
    pub err_horizon: Option<f64>,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Protocol {
    /// FitzHugh-Nagumo: 50 training trajectories of 201 observations every
    /// 0.1, 100 test trajectories, five noise levels.
    pub fn fhn() -> Self {
        Self {
            system: AnalyticSystem::Fhn,
            sigmas: vec![0.120, 0.365, 0.610, 0.855, 1.100],
            replicates: 5,
            n_train: 50,
            n_test: 100,
            n_obs: 201,
            dt_obs: 0.1,
            substeps: 100,
            ic_low: vec![-2.0, -2.0],
            ic_high: vec![2.0, 2.0],
            err_horizon: None,
            // (lambda, rho) from the 20% validation grid search on an
            // independent sigma = 0.61 training set
            solver: SolverConfig {
                h: 0.1,
                rho: 0.5,
                lambda: 1e-2,
                gamma0: 1.0,
                gamma_max: 1e8,
                max_iters: 500,
                early_stop_eps: 1e-3,
                kernel: KernelSpec::gaussian_features(100),
                seed: 0,
                init: InitKind::GradientMatching,
            },
            seed: 0,
        }
    }

    /// Lorenz63: 50 training trajectories of 201 observations every 0.01,
    /// 100 test trajectories, Err over the first 0.2 time units.
    pub fn lorenz63() -> Self {
        Self {
            system: AnalyticSystem::Lorenz63,
            sigmas: vec![0.5, 1.2, 1.9, 2.6, 3.3],
            replicates: 5,
            n_train: 50,
            n_test: 100,
            n_obs: 201,
            dt_obs: 0.01,
            substeps: 100,
            ic_low: vec![-10.0, -10.0, 10.0],
            ic_high: vec![10.0, 10.0, 30.0],
            err_horizon: Some(0.2),
            // (lambda, rho) from a 20% validation grid search scored on the
            // first 0.2 time units, on an independent sigma = 0.5 set
            solver: SolverConfig {
                h: 0.01,
                rho: 0.25,
                lambda: 1e-5,
                gamma0: 1.0,
                gamma_max: 1e8,
                max_iters: 500,
                early_stop_eps: 1e-3,
                kernel: KernelSpec::gaussian_features(300),
                seed: 0,
                init: InitKind::GradientMatching,
            },
            seed: 0,
        }
    }

    /// Lorenz96 with d = 6 and F = 8.
    pub fn lorenz96() -> Self {
        Self {
            system: AnalyticSystem::lorenz96(6, 8.0),
            sigmas: vec![0.120, 0.365, 0.610, 0.855, 1.100],
            replicates: 5,
            n_train: 50,
            n_test: 100,
            n_obs: 201,
            dt_obs: 0.01,
            substeps: 100,
            ic_low: vec![-5.0; 6],
            ic_high: vec![5.0; 6],
            err_horizon: None,
            solver: SolverConfig {
                h: 0.01,
                rho: 0.25,
                lambda: 1e-5,
                gamma0: 1.0,
                gamma_max: 1e8,
                max_iters: 500,
                early_stop_eps: 1e-3,
                kernel: KernelSpec::gaussian_features(400),
                seed: 0,
                init: InitKind::GradientMatching,
            },
            seed: 0,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "fhn" => Ok(Self::fhn()),
            "lorenz63" => Ok(Self::lorenz63()),
            "lorenz96" => Ok(Self::lorenz96()),
            other => Err(Error::Usage(format!(
                "unknown protocol `{other}` (expected fhn, lorenz63 or lorenz96)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.system.dim();
        if self.ic_low.len() != d || self.ic_high.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.ic_low.len().min(self.ic_high.len()),
            });
        }
        if self.ic_low.iter().zip(&self.ic_high).any(|(a, b)| !(a <= b)) {
            return Err(Error::Config("initial-condition box has low > high".into()));
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("sigmas must be a non-empty list of values >= 0".into()));
        }
        if self.replicates == 0 || self.n_train == 0 || self.n_test == 0 || self.n_obs < 2 {
            return Err(Error::Config(
                "replicates, n_train and n_test must be >= 1 and n_obs >= 2".into(),
            ));
        }
        if let Some(h) = self.err_horizon {
            if !(h >= self.dt_obs) {
                return Err(Error::Config("err_horizon must cover at least one observation gap".into()));
            }
        }
        self.solver.validate()
    }

    fn sample_ics(&self, stream: Stream, n: usize) -> Vec<Vec<f64>> {
        let mut rng = rng_for(self.seed, stream, 0);
        (0..n)
            .map(|_| {
                self.ic_low
                    .iter()
                    .zip(&self.ic_high)
                    .map(|(&a, &b)| if a == b { a } else { rng.random_range(a..b) })
                    .collect()
            })
            .collect()
    }

    /// Noiseless training set.
    pub fn train_set(&self) -> Result<Dataset> {
        let ics = self.sample_ics(Stream::InitialConditions, self.n_train);
        simulate_dataset(&self.system, &ics, 0.0, self.dt_obs, self.n_obs, self.substeps)
    }

    /// Noiseless test set, truncated to the Err horizon.
    pub fn test_set(&self) -> Result<Dataset> {
        let ics = self.sample_ics(Stream::TestInitialConditions, self.n_test);
        let n_obs = match self.err_horizon {
            Some(h) => ((h / self.dt_obs + 1e-9).floor() as usize + 1).min(self.n_obs),
            None => self.n_obs,
        };
        simulate_dataset(&self.system, &ics, 0.0, self.dt_obs, n_obs, self.substeps)
    }

    /// Seed of the noise added in cell `(sigma index, replicate)`.
    pub fn noise_seed(&self, sigma_index: usize, replicate: usize) -> u64 {
        derive_seed(self.seed, Stream::Noise, (sigma_index * 1_000_000 + replicate) as u64)
    }
}

/// One `(sigma, replicate)` fit and its test errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub sigma: f64,
    pub replicate: usize,
    /// Err per test trajectory (empty if the fit failed).
    pub errs: Vec<f64>,
    pub err_mean: f64,
    /// Standard error of the mean over test trajectories.
    pub err_sem: f64,
    pub runtime_s: f64,
    pub iterations: usize,
    pub stop_reason: Option<StopReason>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaSummary {
    pub sigma: f64,
    /// Mean over replicates of the per-cell mean Err.
    pub err_mean: f64,
    /// Standard error across replicates.
    pub err_sem: f64,
    pub n_ok: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub system: String,
    pub protocol: Protocol,
    /// Err of the zero-field (constant) predictor per test trajectory.
    pub baseline_errs: Vec<f64>,
    pub baseline_mean: f64,
    pub cells: Vec<SweepCell>,
    pub summary: Vec<SigmaSummary>,
}

fn test_errors(field: &VectorField, test: &Dataset, h: f64) -> Result<Vec<f64>> {
    test.trajectories
        .iter()
        .map(|tr: &Trajectory| {
            let pred = predict_at_observations(field, tr, h)?;
            err_metric(&tr.times, &pred, &tr.values)
        })
        .collect()
}

fn run_cell(
    protocol: &Protocol,
    train: &Dataset,
    test: &Dataset,
    sigma_index: usize,
    replicate: usize,
    opts: FitOptions,
) -> SweepCell {
    let sigma = protocol.sigmas[sigma_index];
    let start = Instant::now();
    let outcome = add_noise(train, sigma, protocol.noise_seed(sigma_index, replicate))
        .and_then(|noisy| penalty_fit_with(&noisy, &protocol.solver, opts))
        .and_then(|fit| {
            let errs = test_errors(&fit.field, test, protocol.solver.h)?;
            Ok((fit.iterations_run, fit.stop_reason, errs))
        });
    let runtime_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok((iterations, stop, errs)) => {
            let (err_mean, err_sem) = mean_sem(&errs);
            SweepCell {
                sigma,
                replicate,
                errs,
                err_mean,
                err_sem,
                runtime_s,
                iterations,
                stop_reason: Some(stop),
                error: None,
            }
        }
        Err(e) => {
            log::warn!("sweep cell sigma={sigma} replicate={replicate} failed: {e}");
            SweepCell {
                sigma,
                replicate,
                errs: Vec::new(),
                err_mean: f64::NAN,
                err_sem: f64::NAN,
                runtime_s,
                iterations: 0,
                stop_reason: None,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Fit every `(sigma, replicate)` cell on a noisy copy of one clean training
/// set and score predictions on one clean test set. Failed fits are recorded
/// in their cell. With more than one thread, cells run concurrently.
pub fn noise_sweep(protocol: &Protocol, opts: FitOptions) -> Result<SweepReport> {
    protocol.validate()?;
    let train = protocol.train_set()?;
    let test = protocol.test_set()?;
    let zero = VectorField::zero(protocol.system.dim());
    let baseline_errs = test_errors(&zero, &test, protocol.solver.h)?;
    let jobs: Vec<(usize, usize)> = (0..protocol.sigmas.len())
        .flat_map(|a| (0..protocol.replicates).map(move |r| (a, r)))
        .collect();
    let serial = FitOptions { threads: 1 };
    let cells: Vec<SweepCell> = if opts.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
        pool.install(|| {
            jobs.par_iter()
                .map(|&(a, r)| run_cell(protocol, &train, &test, a, r, serial))
                .collect()
        })
    } else {
        jobs.iter()
            .map(|&(a, r)| run_cell(protocol, &train, &test, a, r, serial))
            .collect()
    };
    let summary = protocol
        .sigmas
        .iter()
        .map(|&sigma| {
            let ok: Vec<f64> = cells
                .iter()
                .filter(|c| c.sigma == sigma && c.error.is_none())
                .map(|c| c.err_mean)
                .collect();
            let (err_mean, err_sem) = mean_sem(&ok);
            SigmaSummary {
                sigma,
                err_mean,
                err_sem,
                n_ok: ok.len(),
            }
        })
        .collect();
    let (baseline_mean, _) = mean_sem(&baseline_errs);
    Ok(SweepReport {
        system: protocol.system.name().to_string(),
        protocol: protocol.clone(),
        baseline_errs,
        baseline_mean,
        cells,
        summary,
    })
}

/// One row per cell: `system,sigma,replicate,err_mean,err_sem,runtime_s`.
/// Failed cells leave the error columns empty.
pub fn write_sweep_csv<W: std::io::Write>(report: &SweepReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["system", "sigma", "replicate", "err_mean", "err_sem", "runtime_s"])?;
    for c in &report.cells {
        let num = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
        w.write_record([
            report.system.clone(),
            c.sigma.to_string(),
            c.replicate.to_string(),
            num(c.err_mean),
            num(c.err_sem),
            format!("{:.3}", c.runtime_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Protocol {
        let mut p = Protocol::fhn();
        p.sigmas = vec![0.0];
        p.replicates = 1;
        p.n_train = 4;
        p.n_test = 3;
        p.n_obs = 31;
        p.substeps = 10;
        p.solver.max_iters = 5;
        p.solver.kernel = KernelSpec::gaussian_features(40);
        p
    }

    #[test]
    fn single_cell_has_zero_sem_across_replicates() {
        let rep = noise_sweep(&tiny(), FitOptions::default()).unwrap();
        assert_eq!(rep.cells.len(), 1);
        assert_eq!(rep.summary.len(), 1);
        assert_eq!(rep.summary[0].err_sem, 0.0);
        assert_eq!(rep.baseline_errs.len(), 3);
        let mut buf = Vec::new();
        write_sweep_csv(&rep, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("system,sigma,replicate,err_mean,err_sem,runtime_s\nfhn,0,0,"));
    }

    #[test]
    fn protocols_match_published_topology() {
        let f = Protocol::fhn();
        assert_eq!((f.n_train, f.n_obs, f.n_test), (50, 201, 100));
        assert_eq!(f.sigmas, vec![0.120, 0.365, 0.610, 0.855, 1.100]);
        let l = Protocol::lorenz63();
        assert_eq!(l.err_horizon, Some(0.2));
        assert_eq!(l.test_set().map(|t| t.trajectories[0].len()).unwrap_or(0), 21);
        for p in [f, l, Protocol::lorenz96()] {
            p.validate().unwrap();
        }
    }

    #[test]
    fn train_and_test_sets_differ() {
        let p = tiny();
        let a = p.train_set().unwrap();
        let b = p.test_set().unwrap();
        assert_ne!(a.trajectories[0].values[0], b.trajectories[0].values[0]);
        assert_eq!(a, p.train_set().unwrap());
    }
}
