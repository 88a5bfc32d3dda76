//! Penalty method for learning a vector field from trajectories.
//!
//! Each iteration solves a Taylor-linearized least-squares problem in the
//! latent grid states of every trajectory (independent banded systems), then
//! a pooled ridge regression for the field, then grows the penalty weight.

mod config;
mod steps;
mod validate;

pub use config::{InitKind, SolverConfig, CONFIG_KEYS};
pub use steps::{
    central_differences, constraint_residual, f_step, field_change_norm, gradient_matching_init,
    linearized_objective, total_steps, z_step, zero_field, TrajectoryProblem,
};
pub use validate::{grid_search, ValidationReport, ValidationRow};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::ode::{euler_integrate, VectorField};
use crate::rng::{derive_seed, Stream};

/// Diagnostics recorded after each iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Weighted mean squared distance between observations and latents.
    pub data_loss: f64,
    /// Mean squared Euler violation of the latents under the new field.
    pub constraint_residual: f64,
    /// Penalty weight used in this iteration.
    pub gamma: f64,
    /// Relative change of the field in this iteration.
    pub field_change: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    EarlyStop,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub field: VectorField,
    /// Latent states per trajectory, one per grid node.
    pub latents: Vec<Vec<Vec<f64>>>,
    pub grids: Vec<TimeGrid>,
    pub trajectory_ids: Vec<String>,
    pub traces: Vec<TraceRow>,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
}

impl FitResult {
    /// Latents as trajectories on their grid nodes.
    pub fn latent_trajectories(&self) -> Vec<Trajectory> {
        self.latents
            .iter()
            .zip(&self.grids)
            .zip(&self.trajectory_ids)
            .map(|((z, g), id)| Trajectory {
                id: id.clone(),
                times: g.nodes(),
                values: z.clone(),
            })
            .collect()
    }

    /// Traces as CSV: `iter,data_loss,constraint_residual,gamma,field_change`.
    pub fn write_traces<W: std::io::Write>(&self, writer: W) -> Result<()> {
        write_traces(&self.traces, writer)
    }
}

pub fn write_traces<W: std::io::Write>(traces: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in traces {
        w.serialize(row)?;
    }
    if traces.is_empty() {
        w.write_record(["iter", "data_loss", "constraint_residual", "gamma", "field_change"])?;
    }
    w.flush()?;
    Ok(())
}

/// Execution options that do not change the result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitOptions {
    /// Worker threads for the per-trajectory z-steps; 1 runs serially.
    pub threads: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { threads: 1 }
    }
}

/// Resolve the kernel of a config against a dataset.
pub fn build_kernel(dataset: &Dataset, config: &SolverConfig) -> Result<Kernel> {
    let ta = config.kernel.time_augmented();
    let inputs = if ta {
        dataset.points_with_time()
    } else {
        dataset.points()
    };
    let input_dim = dataset.dim + usize::from(ta);
    config.kernel.build(
        input_dim,
        dataset.dim,
        &inputs,
        derive_seed(config.seed, Stream::Features, 0),
    )
}

/// Initial field per the config.
pub fn initial_field(dataset: &Dataset, config: &SolverConfig, kernel: &Kernel) -> Result<VectorField> {
    match config.init {
        InitKind::GradientMatching => gradient_matching_init(dataset, kernel, config.lambda),
        InitKind::ZeroField => Ok(zero_field(kernel, dataset.dim)),
    }
}

pub fn penalty_fit(dataset: &Dataset, config: &SolverConfig) -> Result<FitResult> {
    penalty_fit_with(dataset, config, FitOptions::default())
}

pub fn penalty_fit_with(dataset: &Dataset, config: &SolverConfig, opts: FitOptions) -> Result<FitResult> {
    config.validate()?;
    if opts.threads <= 1 {
        return run(dataset, config, false);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    pool.install(|| run(dataset, config, true))
}

fn run(dataset: &Dataset, config: &SolverConfig, parallel: bool) -> Result<FitResult> {
    let kernel = build_kernel(dataset, config)?;
    let problems = TrajectoryProblem::for_dataset(dataset, config.h)?;
    let grids: Vec<TimeGrid> = problems.iter().map(|p| p.grid.clone()).collect();
    let k_total = total_steps(&grids);
    if k_total == 0 {
        return Err(Error::InsufficientData(
            "no Euler steps: every trajectory occupies a single grid node".into(),
        ));
    }
    if !kernel.is_differentiable() {
        return Err(Error::Unsupported(
            "the penalty method linearizes the field and needs a differentiable kernel".into(),
        ));
    }
    let f0 = initial_field(dataset, config, &kernel)?;
    let mut field = f0.clone();
    let mut latents: Vec<Vec<Vec<f64>>> = problems.iter().map(TrajectoryProblem::interpolate).collect();
    let n = problems.len() as f64;
    let mut gamma = config.gamma0;
    let mut traces = Vec::new();
    let mut stop_reason = StopReason::MaxIters;

    for s in 0..config.max_iters {
        let iteration = s + 1;
        let penalty = gamma * n / k_total as f64;
        let step = |(z, p): (&Vec<Vec<f64>>, &TrajectoryProblem)| z_step(z, &field, penalty, p);
        let new_latents: Result<Vec<Vec<Vec<f64>>>> = if parallel {
            latents.par_iter().zip(problems.par_iter()).map(step).collect()
        } else {
            latents.iter().zip(problems.iter()).map(step).collect()
        };
        let new_latents = new_latents.map_err(|e| diverged(iteration, e, &traces))?;
        let new_field = f_step(&new_latents, &grids, gamma, config.lambda, &f0, &kernel)
            .map_err(|e| diverged(iteration, e, &traces))?;

        let probes: Vec<(Vec<f64>, f64)> = new_latents
            .iter()
            .zip(&grids)
            .flat_map(|(z, g)| z.iter().enumerate().map(move |(l, x)| (x.clone(), g.node(l))))
            .collect();
        let change = field_change_norm(&new_field, &field, &probes);
        let (mut err, mut wsum) = (0.0, 0.0);
        for (p, z) in problems.iter().zip(&new_latents) {
            let (e, w) = p.weighted_sq_error(z);
            err += e;
            wsum += w;
        }
        let row = TraceRow {
            iter: iteration,
            data_loss: err / wsum,
            constraint_residual: constraint_residual(&new_latents, &grids, &new_field),
            gamma,
            field_change: change,
        };
        if !row.data_loss.is_finite() || !row.constraint_residual.is_finite() {
            return Err(Error::FitDiverged {
                iteration,
                reason: "non-finite latent states or field".into(),
                traces,
            });
        }
        log::debug!(
            "iter {iteration}: data_loss {:.3e} residual {:.3e} gamma {:.3e} change {:.3e}",
            row.data_loss,
            row.constraint_residual,
            row.gamma,
            row.field_change
        );
        traces.push(row);
        latents = new_latents;
        field = new_field;
        if change < config.early_stop_eps {
            stop_reason = StopReason::EarlyStop;
            break;
        }
        gamma = config::next_gamma(gamma, config.rho, config.gamma_max);
    }

    Ok(FitResult {
        field,
        latents,
        grids,
        trajectory_ids: dataset.trajectories.iter().map(|t| t.id.clone()).collect(),
        iterations_run: traces.len(),
        traces,
        stop_reason,
    })
}

fn diverged(iteration: usize, e: Error, traces: &[TraceRow]) -> Error {
    match e {
        Error::Numerical(reason) => Error::FitDiverged {
            iteration,
            reason,
            traces: traces.to_vec(),
        },
        other => other,
    }
}

/// Euler prediction from `x0` at `t0` over `horizon` with step `h`.
/// Returns the node times and states.
pub fn predict(
    field: &VectorField,
    x0: &[f64],
    t0: f64,
    horizon: f64,
    h: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if !(horizon >= 0.0) {
        return Err(Error::Config(format!("horizon must be >= 0, got {horizon}")));
    }
    let steps = (horizon / h - 1e-9).ceil().max(0.0) as usize;
    let states = euler_integrate(field, x0, t0, h, steps)?;
    let times = (0..=steps).map(|l| t0 + l as f64 * h).collect();
    Ok((times, states))
}

/// Predict from the first observation of `truth` and read the states off
/// at its observation times (nearest grid node).
pub fn predict_at_observations(field: &VectorField, truth: &Trajectory, h: f64) -> Result<Vec<Vec<f64>>> {
    let t0 = truth.first_time();
    let grid = TimeGrid::for_trajectory(truth, h)?;
    let states = euler_integrate(field, &truth.values[0], t0, h, grid.k)?;
    Ok(grid.obs_index.iter().map(|&k| states[k].clone()).collect())
}
