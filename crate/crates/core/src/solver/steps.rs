//! The building blocks of the penalty method: latent initialization,
//! gradient matching, the linearized z-step and the ridge f-step.

use nalgebra::{DMatrix, DVector};

use crate::data::{sample_weights, Dataset, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::linalg::{solve_spd, BlockTridiagonal};
use crate::ode::VectorField;

/// One trajectory's data attached to its grid.
#[derive(Debug, Clone)]
pub struct TrajectoryProblem {
    pub grid: TimeGrid,
    pub values: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl TrajectoryProblem {
    pub fn new(traj: &Trajectory, horizon: f64, h: f64) -> Result<Self> {
        Ok(Self {
            grid: TimeGrid::for_trajectory(traj, h)?,
            values: traj.values.clone(),
            weights: sample_weights(traj, horizon, h)?,
        })
    }

    pub fn for_dataset(dataset: &Dataset, h: f64) -> Result<Vec<Self>> {
        dataset
            .trajectories
            .iter()
            .map(|t| Self::new(t, dataset.horizon, h))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Piecewise-linear interpolation of the observations onto the grid,
    /// constant before the first and after the last observation.
    pub fn interpolate(&self) -> Vec<Vec<f64>> {
        let g = &self.grid;
        let obs_t: Vec<f64> = g.obs_index.iter().map(|&k| g.node(k)).collect();
        (0..=g.k)
            .map(|l| {
                let s = g.node(l);
                let j = obs_t.partition_point(|&t| t <= s);
                if j == 0 {
                    self.values[0].clone()
                } else if j == obs_t.len() {
                    self.values[j - 1].clone()
                } else {
                    let (t0, t1) = (obs_t[j - 1], obs_t[j]);
                    let a = (s - t0) / (t1 - t0);
                    self.values[j - 1]
                        .iter()
                        .zip(&self.values[j])
                        .map(|(y0, y1)| y0 + a * (y1 - y0))
                        .collect()
                }
            })
            .collect()
    }

    /// `sum_j w_j |y_j - z_{k_j}|^2` and `sum_j w_j`.
    pub fn weighted_sq_error(&self, z: &[Vec<f64>]) -> (f64, f64) {
        let mut err = 0.0;
        let mut wsum = 0.0;
        for ((y, &k), &w) in self.values.iter().zip(&self.grid.obs_index).zip(&self.weights) {
            err += w * y.iter().zip(&z[k]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            wsum += w;
        }
        (err, wsum)
    }
}

/// Kernel input for a grid node: the state, then time when time-augmented.
pub(crate) fn node_input(z: &[f64], t: f64, time_augmented: bool) -> Vec<f64> {
    let mut v = z.to_vec();
    if time_augmented {
        v.push(t);
    }
    v
}

/// Derivative estimates at the observation times: central differences
/// inside, one-sided differences at the ends.
pub fn central_differences(traj: &Trajectory) -> Result<Vec<Vec<f64>>> {
    let m = traj.len();
    if m < 2 {
        return Err(Error::InsufficientData(format!(
            "trajectory `{}` has {m} observation(s); derivatives need at least 2",
            traj.id
        )));
    }
    let (t, y) = (&traj.times, &traj.values);
    let slope = |a: usize, b: usize| -> Vec<f64> {
        y[b].iter().zip(&y[a]).map(|(yb, ya)| (yb - ya) / (t[b] - t[a])).collect()
    };
    Ok((0..m)
        .map(|j| {
            if j == 0 {
                slope(0, 1)
            } else if j == m - 1 {
                slope(m - 2, m - 1)
            } else {
                slope(j - 1, j + 1)
            }
        })
        .collect())
}

/// Ridge regression of finite-difference derivatives on the observations,
/// pooled over trajectories:
/// `min (1/M) sum |dy_j - f(y_j)|^2 + lambda |f|^2`.
///
/// Trajectories with fewer than two observations are skipped.
pub fn gradient_matching_init(dataset: &Dataset, kernel: &Kernel, lambda: f64) -> Result<VectorField> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let d = dataset.dim;
    let ta = kernel.time_augmented();
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for tr in &dataset.trajectories {
        if tr.len() < 2 {
            log::warn!("gradient matching skips trajectory `{}` with a single observation", tr.id);
            continue;
        }
        let dy = central_differences(tr)?;
        for ((t, y), g) in tr.times.iter().zip(&tr.values).zip(dy) {
            inputs.push(node_input(y, *t, ta));
            targets.push(g);
        }
    }
    if inputs.is_empty() {
        return Err(Error::InsufficientData(
            "gradient matching needs a trajectory with at least two observations".into(),
        ));
    }
    let m = inputs.len();
    let target = DMatrix::from_fn(m, d, |r, c| targets[r][c]);
    ridge_field(kernel, &inputs, &target, lambda * m as f64, None)
}

/// Solve the kernel ridge problem `min sum_r |U_r - g(x_r)|^2 + alpha |g|^2`
/// and return `base + g`.
fn ridge_field(
    kernel: &Kernel,
    inputs: &[Vec<f64>],
    targets: &DMatrix<f64>,
    alpha: f64,
    base: Option<&VectorField>,
) -> Result<VectorField> {
    let d = targets.ncols();
    match kernel {
        Kernel::Explicit(map) => {
            let phi = map.feature_matrix(inputs);
            let mut a = phi.tr_mul(&phi);
            for i in 0..a.nrows() {
                a[(i, i)] += alpha;
            }
            warn_if_ill_conditioned(&a);
            let delta = solve_spd(a, &phi.tr_mul(targets))?;
            if delta.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("f-step produced non-finite coefficients".into()));
            }
            Ok(merge_explicit(map, delta, base))
        }
        Kernel::Separable(_) => {
            let n = inputs.len();
            let mut g = kernel.gram(inputs, d)?;
            for i in 0..g.nrows() {
                g[(i, i)] += alpha;
            }
            let rhs = DMatrix::from_fn(n * d, 1, |r, _| targets[(r / d, r % d)]);
            let w = solve_spd(g, &rhs)?;
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("f-step produced non-finite weights".into()));
            }
            Ok(VectorField::Representer {
                kernel: kernel.clone(),
                centers: inputs.to_vec(),
                weights: (0..n).map(|l| (0..d).map(|i| w[l * d + i]).collect()).collect(),
                base: base.map(|b| Box::new(b.clone())),
            })
        }
    }
}

/// `base + C^T phi`, folding the coefficients into `base` when it is an
/// explicit field over the same features.
fn merge_explicit(map: &crate::kernels::FeatureMap, delta: DMatrix<f64>, base: Option<&VectorField>) -> VectorField {
    match base {
        Some(VectorField::Explicit {
            features,
            coefficients,
            base: inner,
        }) if features == map => VectorField::Explicit {
            features: map.clone(),
            coefficients: coefficients + delta,
            base: inner.clone(),
        },
        other => VectorField::Explicit {
            features: map.clone(),
            coefficients: delta,
            base: other.map(|b| Box::new(b.clone())),
        },
    }
}

fn warn_if_ill_conditioned(a: &DMatrix<f64>) {
    let diag = a.diagonal();
    let max = diag.iter().copied().fold(0.0, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 && max / min > 1e12 {
        log::warn!("f-step system is ill-conditioned (diagonal ratio {:.2e})", max / min);
    }
}

/// The initial field for `kernel` that is identically zero.
pub fn zero_field(kernel: &Kernel, d: usize) -> VectorField {
    match kernel {
        Kernel::Explicit(map) => VectorField::Explicit {
            features: map.clone(),
            coefficients: DMatrix::zeros(map.n_features(), d),
            base: None,
        },
        Kernel::Separable(_) => VectorField::zero(d),
    }
}

/// Linearization of `f` at the previous iterate: per step `l < k`,
/// `z_{l+1} ~ B_l z_l + c_l` with `B_l = I + h J_l`, `c_l = h (f(z_l) - J_l z_l)`.
fn linearize(z_prev: &[Vec<f64>], f: &VectorField, grid: &TimeGrid) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>> {
    let d = z_prev[0].len();
    let h = grid.h;
    let mut fx = vec![0.0; d];
    (0..grid.k)
        .map(|l| {
            let zl = &z_prev[l];
            let t = grid.node(l);
            f.eval_into(zl, t, &mut fx);
            let j = f.jacobian_at(zl, t)?;
            let zv = DVector::from_column_slice(zl);
            let b = DMatrix::identity(d, d) + &j * h;
            let c = (DVector::from_column_slice(&fx) - &j * zv) * h;
            if b.iter().chain(c.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite linearization at node {l}")));
            }
            Ok((b, c))
        })
        .collect()
}

/// Exact minimizer over `z` of the linearized objective
/// `sum_j w_j |y_j - z_{k_j}|^2 + penalty * sum_l |z_{l+1} - B_l z_l - c_l|^2`,
/// obtained from the block-tridiagonal normal equations.
///
/// `penalty` is the coefficient in front of the constraint sum (`gamma / k`
/// for a single trajectory).
pub fn z_step(z_prev: &[Vec<f64>], f: &VectorField, penalty: f64, prob: &TrajectoryProblem) -> Result<Vec<Vec<f64>>> {
    let grid = &prob.grid;
    let d = prob.dim();
    if z_prev.len() != grid.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: grid.n_nodes(),
            got: z_prev.len(),
        });
    }
    let lin = linearize(z_prev, f, grid)?;
    let nb = grid.n_nodes();
    let mut sys = BlockTridiagonal::new(nb, d);
    let mut rhs = vec![DVector::zeros(d); nb];
    for ((y, &k), &w) in prob.values.iter().zip(&grid.obs_index).zip(&prob.weights) {
        for i in 0..d {
            sys.diag[k][(i, i)] += w;
            rhs[k][i] += w * y[i];
        }
    }
    for (l, (b, c)) in lin.iter().enumerate() {
        let bt = b.transpose();
        sys.diag[l] += (&bt * b) * penalty;
        for i in 0..d {
            sys.diag[l + 1][(i, i)] += penalty;
        }
        sys.upper[l] -= &bt * penalty;
        rhs[l] -= (&bt * c) * penalty;
        rhs[l + 1] += c * penalty;
    }
    let x = sys
        .solve(&rhs)
        .map_err(|node| Error::Numerical(format!("singular z-step system at node {node}")))?;
    let z: Vec<Vec<f64>> = x.into_iter().map(|v| v.iter().copied().collect()).collect();
    if let Some(l) = z.iter().position(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numerical(format!("non-finite z-step solution at node {l}")));
    }
    Ok(z)
}

/// The objective minimized by [`z_step`], evaluated at `z`.
pub fn linearized_objective(
    z: &[Vec<f64>],
    z_prev: &[Vec<f64>],
    f: &VectorField,
    penalty: f64,
    prob: &TrajectoryProblem,
) -> Result<f64> {
    let lin = linearize(z_prev, f, &prob.grid)?;
    let (data, _) = prob.weighted_sq_error(z);
    let mut pen = 0.0;
    for (l, (b, c)) in lin.iter().enumerate() {
        let r = DVector::from_column_slice(&z[l + 1]) - b * DVector::from_column_slice(&z[l]) - c;
        pen += r.norm_squared();
    }
    Ok(data + penalty * pen)
}

/// Total number of Euler steps over all grids.
pub fn total_steps(grids: &[TimeGrid]) -> usize {
    grids.iter().map(|g| g.k).sum()
}

/// Kernel inputs and targets `u_l = (z_{l+1} - z_l)/h - f0(z_l)` for every
/// step `l < k` of every trajectory.
fn step_targets(
    latents: &[Vec<Vec<f64>>],
    grids: &[TimeGrid],
    f0: &VectorField,
    time_augmented: bool,
) -> (Vec<Vec<f64>>, DMatrix<f64>) {
    let d = latents[0][0].len();
    let n = total_steps(grids);
    let mut inputs = Vec::with_capacity(n);
    let mut u = DMatrix::zeros(n, d);
    let mut f0x = vec![0.0; d];
    let mut r = 0;
    for (z, g) in latents.iter().zip(grids) {
        for l in 0..g.k {
            let t = g.node(l);
            f0.eval_into(&z[l], t, &mut f0x);
            for i in 0..d {
                u[(r, i)] = (z[l + 1][i] - z[l][i]) / g.h - f0x[i];
            }
            inputs.push(node_input(&z[l], t, time_augmented));
            r += 1;
        }
    }
    (inputs, u)
}

/// Ridge step in `f` for fixed latents: minimizes
/// `(gamma h^2 / K) sum |u_l - g(z_l)|^2 + lambda |g|^2` over `g = f - f0`,
/// where `K` is the total number of steps. Explicit kernels solve in feature
/// space; separable kernels solve the representer system with one center
/// per step.
pub fn f_step(
    latents: &[Vec<Vec<f64>>],
    grids: &[TimeGrid],
    gamma: f64,
    lambda: f64,
    f0: &VectorField,
    kernel: &Kernel,
) -> Result<VectorField> {
    if !(gamma > 0.0 && lambda > 0.0) {
        return Err(Error::Config("f-step needs gamma > 0 and lambda > 0".into()));
    }
    let k_total = total_steps(grids);
    if k_total == 0 {
        return Err(Error::InsufficientData(
            "no Euler steps: every trajectory occupies a single grid node".into(),
        ));
    }
    let h = grids[0].h;
    let alpha = lambda * k_total as f64 / (gamma * h * h);
    let (inputs, u) = step_targets(latents, grids, f0, kernel.time_augmented());
    ridge_field(kernel, &inputs, &u, alpha, Some(f0))
}

/// Mean squared Euler-constraint violation
/// `(1/K) sum_i sum_l |z_{l+1} - z_l - h f(z_l)|^2`.
pub fn constraint_residual(latents: &[Vec<Vec<f64>>], grids: &[TimeGrid], f: &VectorField) -> f64 {
    let k_total = total_steps(grids);
    if k_total == 0 {
        return 0.0;
    }
    let d = f.dim();
    let mut fx = vec![0.0; d];
    let mut sum = 0.0;
    for (z, g) in latents.iter().zip(grids) {
        for l in 0..g.k {
            f.eval_into(&z[l], g.node(l), &mut fx);
            for i in 0..d {
                let r = z[l + 1][i] - z[l][i] - g.h * fx[i];
                sum += r * r;
            }
        }
    }
    sum / k_total as f64
}

/// Relative change between consecutive field estimates.
///
/// Explicit fields over the same features compare coefficients in Frobenius
/// norm; representer fields with the same centers compare weights; anything
/// else compares RMS field values at the probe points. Returns `+inf` when
/// the old field is zero and the fields differ.
pub fn field_change_norm(f_new: &VectorField, f_old: &VectorField, probes: &[(Vec<f64>, f64)]) -> f64 {
    let ratio = |diff: f64, old: f64| {
        if diff == 0.0 {
            0.0
        } else if old == 0.0 {
            f64::INFINITY
        } else {
            diff / old
        }
    };
    match (f_new, f_old) {
        (
            VectorField::Explicit {
                features: fa,
                coefficients: ca,
                base: ba,
            },
            VectorField::Explicit {
                features: fb,
                coefficients: cb,
                base: bb,
            },
        ) if fa == fb && ba == bb => return ratio((ca - cb).norm(), cb.norm()),
        (
            VectorField::Representer {
                kernel: ka,
                centers: za,
                weights: wa,
                base: ba,
            },
            VectorField::Representer {
                kernel: kb,
                centers: zb,
                weights: wb,
                base: bb,
            },
        ) if ka == kb && za == zb && ba == bb => {
            let diff: f64 = wa
                .iter()
                .zip(wb)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
                .sum();
            let old: f64 = wb.iter().flatten().map(|x| x * x).sum();
            return ratio(diff.sqrt(), old.sqrt());
        }
        _ => {}
    }
    let d = f_old.dim();
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut diff = 0.0;
    let mut old = 0.0;
    for (x, t) in probes {
        f_new.eval_into(x, *t, &mut a);
        f_old.eval_into(x, *t, &mut b);
        for i in 0..d {
            diff += (a[i] - b[i]) * (a[i] - b[i]);
            old += b[i] * b[i];
        }
    }
    ratio(diff.sqrt(), old.sqrt())
}
