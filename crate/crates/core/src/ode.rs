//! Vector fields, Euler integration and the reference benchmark systems.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::kernels::{FeatureMap, Kernel};
use crate::linalg::serde_rows;

/// Closed-form systems. Names in configs and on the command line:
/// `fhn | lorenz63 | lorenz96 | harmonic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum AnalyticSystem {
    /// FitzHugh-Nagumo: `v' = v - v^3/3 - w + 1`, `w' = 0.08 (v + 0.7 - 0.8 w)`.
    Fhn,
    Lorenz63,
    /// `x_k' = (x_{k+1} - x_{k-2}) x_{k-1} - x_k + F`, indices cyclic.
    Lorenz96 { dim: usize, forcing: f64 },
    /// `x1' = x2`, `x2' = cos t - 0.001 x2 - 10000 x1`. Stiff: use `h <= 1e-4`.
    Harmonic,
    /// `f(x) = M x`.
    Linear {
        #[serde(with = "serde_rows")]
        matrix: DMatrix<f64>,
    },
    Constant { value: Vec<f64> },
}

impl AnalyticSystem {
    pub fn lorenz96(dim: usize, forcing: f64) -> Self {
        AnalyticSystem::Lorenz96 { dim, forcing }
    }

    /// Look up a named benchmark system (`lorenz96` defaults to d = 6, F = 8).
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "fhn" => Ok(AnalyticSystem::Fhn),
            "lorenz63" => Ok(AnalyticSystem::Lorenz63),
            "lorenz96" => Ok(AnalyticSystem::lorenz96(6, 8.0)),
            "harmonic" | "harmonic_forced" => Ok(AnalyticSystem::Harmonic),
            other => Err(Error::Usage(format!(
                "unknown system `{other}` (expected fhn, lorenz63, lorenz96 or harmonic)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AnalyticSystem::Fhn => "fhn",
            AnalyticSystem::Lorenz63 => "lorenz63",
            AnalyticSystem::Lorenz96 { .. } => "lorenz96",
            AnalyticSystem::Harmonic => "harmonic",
            AnalyticSystem::Linear { .. } => "linear",
            AnalyticSystem::Constant { .. } => "constant",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            AnalyticSystem::Fhn | AnalyticSystem::Harmonic => 2,
            AnalyticSystem::Lorenz63 => 3,
            AnalyticSystem::Lorenz96 { dim, .. } => *dim,
            AnalyticSystem::Linear { matrix } => matrix.nrows(),
            AnalyticSystem::Constant { value } => value.len(),
        }
    }

    pub fn is_autonomous(&self) -> bool {
        !matches!(self, AnalyticSystem::Harmonic)
    }

    fn validate(&self) -> Result<()> {
        match self {
            AnalyticSystem::Lorenz96 { dim, forcing } => {
                if *dim < 4 || !forcing.is_finite() {
                    return Err(Error::Config("lorenz96 needs dim >= 4 and a finite forcing".into()));
                }
            }
            AnalyticSystem::Linear { matrix } => {
                if !matrix.is_square() {
                    return Err(Error::Config("linear system matrix must be square".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match self {
            AnalyticSystem::Fhn => {
                let (v, w) = (x[0], x[1]);
                out[0] = v - v * v * v / 3.0 - w + 1.0;
                out[1] = 0.08 * (v + 0.7 - 0.8 * w);
            }
            AnalyticSystem::Lorenz63 => {
                let (a, b, c) = (x[0], x[1], x[2]);
                out[0] = 10.0 * (b - a);
                out[1] = a * (28.0 - c) - b;
                out[2] = a * b - 8.0 / 3.0 * c;
            }
            AnalyticSystem::Lorenz96 { dim, forcing } => {
                let d = *dim;
                for k in 0..d {
                    let xp1 = x[(k + 1) % d];
                    let xm1 = x[(k + d - 1) % d];
                    let xm2 = x[(k + d - 2) % d];
                    out[k] = (xp1 - xm2) * xm1 - x[k] + forcing;
                }
            }
            AnalyticSystem::Harmonic => {
                out[0] = x[1];
                out[1] = t.cos() - 0.001 * x[1] - 10000.0 * x[0];
            }
            AnalyticSystem::Linear { matrix } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..x.len()).map(|j| matrix[(i, j)] * x[j]).sum();
                }
            }
            AnalyticSystem::Constant { value } => out.copy_from_slice(value),
        }
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut j = DMatrix::zeros(d, d);
        match self {
            AnalyticSystem::Fhn => {
                j[(0, 0)] = 1.0 - x[0] * x[0];
                j[(0, 1)] = -1.0;
                j[(1, 0)] = 0.08;
                j[(1, 1)] = -0.064;
            }
            AnalyticSystem::Lorenz63 => {
                let (a, b, c) = (x[0], x[1], x[2]);
                j[(0, 0)] = -10.0;
                j[(0, 1)] = 10.0;
                j[(1, 0)] = 28.0 - c;
                j[(1, 1)] = -1.0;
                j[(1, 2)] = -a;
                j[(2, 0)] = b;
                j[(2, 1)] = a;
                j[(2, 2)] = -8.0 / 3.0;
            }
            AnalyticSystem::Lorenz96 { dim, .. } => {
                let d = *dim;
                for k in 0..d {
                    let (p1, m1, m2) = ((k + 1) % d, (k + d - 1) % d, (k + d - 2) % d);
                    j[(k, p1)] += x[m1];
                    j[(k, m2)] -= x[m1];
                    j[(k, m1)] += x[p1] - x[m2];
                    j[(k, k)] -= 1.0;
                }
            }
            AnalyticSystem::Harmonic => {
                j[(0, 1)] = 1.0;
                j[(1, 0)] = -10000.0;
                j[(1, 1)] = -0.001;
            }
            AnalyticSystem::Linear { matrix } => j.copy_from(matrix),
            AnalyticSystem::Constant { .. } => {}
        }
        j
    }
}

/// A vector field `f(x)` or `f(t, x)`, learned or closed-form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum VectorField {
    /// `f(x) = f0(x) + sum_l K(x, z_l) w_l`. Centers are full kernel inputs
    /// (state, then time for time-augmented kernels).
    Representer {
        kernel: Kernel,
        centers: Vec<Vec<f64>>,
        weights: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base: Option<Box<VectorField>>,
    },
    /// `f(x) = f0(x) + C^T phi(x[, t])` with `C` of shape `n_F x d`.
    Explicit {
        features: FeatureMap,
        #[serde(with = "serde_rows")]
        coefficients: DMatrix<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base: Option<Box<VectorField>>,
    },
    Analytic { system: AnalyticSystem },
}

impl From<AnalyticSystem> for VectorField {
    fn from(system: AnalyticSystem) -> Self {
        VectorField::Analytic { system }
    }
}

impl VectorField {
    /// The zero field on `R^d`.
    pub fn zero(d: usize) -> Self {
        AnalyticSystem::Constant { value: vec![0.0; d] }.into()
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorField::Representer { weights, kernel, base, .. } => match weights.first() {
                Some(w) => w.len(),
                None => match (base, kernel) {
                    (Some(b), _) => b.dim(),
                    (None, Kernel::Separable(m)) => m.output_dim(),
                    (None, Kernel::Explicit(f)) => f.state_dim(),
                },
            },
            VectorField::Explicit { coefficients, .. } => coefficients.ncols(),
            VectorField::Analytic { system } => system.dim(),
        }
    }

    pub fn is_autonomous(&self) -> bool {
        let own = match self {
            VectorField::Representer { kernel, .. } => !kernel.time_augmented(),
            VectorField::Explicit { features, .. } => !features.time_augmented,
            VectorField::Analytic { system } => system.is_autonomous(),
        };
        own && self.base().is_none_or(VectorField::is_autonomous)
    }

    pub fn base(&self) -> Option<&VectorField> {
        match self {
            VectorField::Representer { base, .. } | VectorField::Explicit { base, .. } => {
                base.as_deref()
            }
            VectorField::Analytic { .. } => None,
        }
    }

    /// Structural consistency checks.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        match self {
            VectorField::Representer {
                kernel,
                centers,
                weights,
                ..
            } => {
                if centers.len() != weights.len() {
                    return Err(Error::DimensionMismatch {
                        expected: centers.len(),
                        got: weights.len(),
                    });
                }
                let input = d + usize::from(kernel.time_augmented());
                for (c, w) in centers.iter().zip(weights) {
                    if c.len() != input || w.len() != d {
                        return Err(Error::DimensionMismatch {
                            expected: input,
                            got: c.len(),
                        });
                    }
                }
                if let Kernel::Separable(m) = kernel {
                    if m.output_dim() != d {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            got: m.output_dim(),
                        });
                    }
                }
            }
            VectorField::Explicit {
                features,
                coefficients,
                ..
            } => {
                if coefficients.nrows() != features.n_features() {
                    return Err(Error::DimensionMismatch {
                        expected: features.n_features(),
                        got: coefficients.nrows(),
                    });
                }
                if features.state_dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: features.state_dim(),
                    });
                }
            }
            VectorField::Analytic { system } => system.validate()?,
        }
        if let Some(b) = self.base() {
            b.validate()?;
            if b.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: b.dim(),
                });
            }
        }
        Ok(())
    }

    fn check(&self, x: &[f64], t: Option<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("field evaluated at a non-finite state".into()));
        }
        if !self.is_autonomous() && t.is_none() {
            return Err(Error::Usage("non-autonomous field needs a time argument".into()));
        }
        Ok(())
    }

    /// `f(x)` or `f(t, x)`; `t` is required iff the field is non-autonomous
    /// and ignored otherwise.
    pub fn eval(&self, x: &[f64], t: Option<f64>) -> Result<Vec<f64>> {
        self.check(x, t)?;
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, t.unwrap_or(0.0), &mut out);
        Ok(out)
    }

    /// Unchecked evaluation at time `t` (ignored by autonomous parts).
    pub fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match self.base() {
            Some(b) => b.eval_into(x, t, out),
            None => out.fill(0.0),
        }
        match self {
            VectorField::Representer {
                kernel,
                centers,
                weights,
                ..
            } => {
                let input = kernel_input(x, t, kernel.time_augmented());
                let mut aw = vec![0.0; out.len()];
                for (c, w) in centers.iter().zip(weights) {
                    let k = kernel.scalar(&input, c);
                    mix_apply(kernel, w, &mut aw);
                    for (o, a) in out.iter_mut().zip(&aw) {
                        *o += k * a;
                    }
                }
            }
            VectorField::Explicit {
                features,
                coefficients,
                ..
            } => {
                let input = kernel_input(x, t, features.time_augmented);
                let mut phi = vec![0.0; features.n_features()];
                features.features_into(&input, &mut phi);
                for (i, o) in out.iter_mut().enumerate() {
                    *o += coefficients.column(i).dot(&nalgebra::DVectorView::from_slice(&phi, phi.len()));
                }
            }
            VectorField::Analytic { system } => {
                let mut own = vec![0.0; out.len()];
                system.eval_into(x, t, &mut own);
                for (o, v) in out.iter_mut().zip(own) {
                    *o += v;
                }
            }
        }
    }

    /// Spatial Jacobian `df/dx` (time is held fixed for non-autonomous fields).
    pub fn jacobian(&self, x: &[f64], t: Option<f64>) -> Result<DMatrix<f64>> {
        self.check(x, t)?;
        self.jacobian_at(x, t.unwrap_or(0.0))
    }

    /// Jacobian without input checks; still fails for non-differentiable kernels.
    pub fn jacobian_at(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
        let d = x.len();
        let mut jac = match self.base() {
            Some(b) => b.jacobian_at(x, t)?,
            None => DMatrix::zeros(d, d),
        };
        match self {
            VectorField::Representer {
                kernel,
                centers,
                weights,
                ..
            } => {
                let ta = kernel.time_augmented();
                let input = kernel_input(x, t, ta);
                let mut g = vec![0.0; input.len()];
                let mut aw = vec![0.0; d];
                for (c, w) in centers.iter().zip(weights) {
                    if !kernel.grad_u_into(&input, c, &mut g) {
                        return Err(Error::Unsupported(
                            "Jacobian of a field with a non-differentiable kernel".into(),
                        ));
                    }
                    mix_apply(kernel, w, &mut aw);
                    for i in 0..d {
                        for j in 0..d {
                            jac[(i, j)] += aw[i] * g[j];
                        }
                    }
                }
            }
            VectorField::Explicit {
                features,
                coefficients,
                ..
            } => {
                let input = kernel_input(x, t, features.time_augmented);
                let mut dphi = DMatrix::zeros(features.n_features(), features.input_dim);
                features.jacobian_into(&input, &mut dphi);
                let spatial = dphi.columns(0, d);
                jac += coefficients.transpose() * spatial;
            }
            VectorField::Analytic { system } => jac += system.jacobian(x),
        }
        Ok(jac)
    }
}

fn kernel_input(x: &[f64], t: f64, time_augmented: bool) -> Vec<f64> {
    let mut v = x.to_vec();
    if time_augmented {
        v.push(t);
    }
    v
}

/// `out = A w` for separable kernels, `w` for explicit ones.
fn mix_apply(kernel: &Kernel, w: &[f64], out: &mut [f64]) {
    match kernel {
        Kernel::Separable(m) => {
            for (i, o) in out.iter_mut().enumerate() {
                *o = (0..w.len()).map(|j| m.mix[(i, j)] * w[j]).sum();
            }
        }
        Kernel::Explicit(_) => out.copy_from_slice(w),
    }
}

/// Forward Euler `z_{l+1} = z_l + h f(t_l, z_l)`, returning all `steps + 1`
/// states. A non-finite state is reported with the step that produced it.
pub fn euler_integrate(f: &VectorField, x0: &[f64], t0: f64, h: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("step h must be positive, got {h}")));
    }
    f.check(x0, Some(t0))?;
    let d = x0.len();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.to_vec());
    let mut x = x0.to_vec();
    let mut dx = vec![0.0; d];
    for l in 0..steps {
        f.eval_into(&x, t0 + l as f64 * h, &mut dx);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += h * di;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: l + 1 });
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Simulate noiseless trajectories of `f` observed every `dt_obs`, using
/// `substeps` Euler steps per observation interval.
pub fn simulate_field(
    f: &VectorField,
    initial_conditions: &[Vec<f64>],
    t0: f64,
    dt_obs: f64,
    n_obs: usize,
    substeps: usize,
) -> Result<Dataset> {
    if substeps == 0 {
        return Err(Error::Config("integrator_substeps must be >= 1".into()));
    }
    if n_obs == 0 {
        return Err(Error::Config("n_obs must be >= 1".into()));
    }
    if !(dt_obs > 0.0) {
        return Err(Error::Config(format!("dt_obs must be positive, got {dt_obs}")));
    }
    let h = dt_obs / substeps as f64;
    let trajectories = initial_conditions
        .iter()
        .enumerate()
        .map(|(i, x0)| {
            let states = euler_integrate(f, x0, t0, h, (n_obs - 1) * substeps)?;
            let values: Vec<Vec<f64>> = states.into_iter().step_by(substeps).collect();
            let times = (0..n_obs).map(|l| t0 + l as f64 * dt_obs).collect();
            Trajectory::new(i.to_string(), times, values)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(trajectories)
}

pub fn simulate_dataset(
    system: &AnalyticSystem,
    initial_conditions: &[Vec<f64>],
    t0: f64,
    dt_obs: f64,
    n_obs: usize,
    substeps: usize,
) -> Result<Dataset> {
    simulate_field(&system.clone().into(), initial_conditions, t0, dt_obs, n_obs, substeps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{MatrixKernel, ScalarKernel};
    use approx::assert_abs_diff_eq;

    #[test]
    fn reference_values() {
        let fhn: VectorField = AnalyticSystem::Fhn.into();
        let v = fhn.eval(&[0.0, 0.0], None).unwrap();
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.056, epsilon = 1e-15);
        let lz: VectorField = AnalyticSystem::Lorenz63.into();
        let v = lz.eval(&[1.0, 1.0, 1.0], None).unwrap();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 26.0);
        assert_abs_diff_eq!(v[2], -5.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn fhn_jacobian_at_origin() {
        let fhn: VectorField = AnalyticSystem::Fhn.into();
        let j = fhn.jacobian(&[0.0, 0.0], None).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.08, -0.064]);
        assert_abs_diff_eq!(j, expect, epsilon = 1e-15);
    }

    #[test]
    fn linear_field_jacobian_is_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let f: VectorField = AnalyticSystem::Linear { matrix: m.clone() }.into();
        assert_eq!(f.jacobian(&[0.3, -1.2], None).unwrap(), m);
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let systems = [
            AnalyticSystem::Fhn,
            AnalyticSystem::Lorenz63,
            AnalyticSystem::lorenz96(6, 8.0),
            AnalyticSystem::Harmonic,
        ];
        for s in systems {
            let f: VectorField = s.clone().into();
            let d = f.dim();
            let x: Vec<f64> = (0..d).map(|i| 0.3 * i as f64 - 0.5).collect();
            let j = f.jacobian(&x, Some(0.7)).unwrap();
            for c in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += 1e-6;
                xm[c] -= 1e-6;
                let fp = f.eval(&xp, Some(0.7)).unwrap();
                let fm = f.eval(&xm, Some(0.7)).unwrap();
                for r in 0..d {
                    let fd = (fp[r] - fm[r]) / 2e-6;
                    assert!((fd - j[(r, c)]).abs() < 1e-5 * (1.0 + fd.abs()), "{s:?} ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn harmonic_needs_time() {
        let f: VectorField = AnalyticSystem::Harmonic.into();
        assert!(!f.is_autonomous());
        assert!(f.eval(&[0.0, 0.0], None).is_err());
        assert_eq!(f.eval(&[0.0, 0.0], Some(0.0)).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn lorenz96_is_cyclically_equivariant() {
        let f: VectorField = AnalyticSystem::lorenz96(6, 8.0).into();
        let x = [1.0, -2.0, 0.5, 3.0, -1.5, 2.5];
        let fx = f.eval(&x, None).unwrap();
        for s in 1..6 {
            let shifted: Vec<f64> = (0..6).map(|k| x[(k + s) % 6]).collect();
            let fs = f.eval(&shifted, None).unwrap();
            let expect: Vec<f64> = (0..6).map(|k| fx[(k + s) % 6]).collect();
            assert_eq!(fs, expect);
        }
    }

    #[test]
    fn euler_examples() {
        let c: VectorField = AnalyticSystem::Constant { value: vec![2.0] }.into();
        let z = euler_integrate(&c, &[0.0], 0.0, 0.1, 10).unwrap();
        assert_eq!(z.len(), 11);
        for (l, s) in z.iter().enumerate() {
            assert!((s[0] - 0.2 * l as f64).abs() <= 1e-12);
        }
        let g: VectorField = AnalyticSystem::Linear {
            matrix: DMatrix::from_element(1, 1, 1.0),
        }
        .into();
        let z = euler_integrate(&g, &[1.0], 0.0, 0.1, 10).unwrap();
        assert_abs_diff_eq!(z[10][0], 1.1f64.powi(10), epsilon = 1e-12);
        assert_eq!(euler_integrate(&g, &[1.0], 0.0, 0.1, 0).unwrap(), vec![vec![1.0]]);
    }

    #[test]
    fn divergence_reports_step() {
        let g: VectorField = AnalyticSystem::Linear {
            matrix: DMatrix::from_element(1, 1, 1e200),
        }
        .into();
        match euler_integrate(&g, &[1e200], 0.0, 1.0, 5) {
            Err(Error::Divergence { step }) => assert_eq!(step, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_weight_representer_is_zero() {
        let k = Kernel::Separable(MatrixKernel::identity(ScalarKernel::gaussian(1.0), 2).unwrap());
        let f = VectorField::Representer {
            kernel: k,
            centers: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            weights: vec![vec![0.0, 0.0]; 2],
            base: None,
        };
        f.validate().unwrap();
        assert_eq!(f.eval(&[0.3, 0.2], None).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn simulate_topology() {
        let ics = vec![vec![0.0, 0.0], vec![1.0, -1.0]];
        let ds = simulate_dataset(&AnalyticSystem::Fhn, &ics, 0.0, 0.1, 201, 10).unwrap();
        assert_eq!(ds.n_trajectories(), 2);
        assert_eq!(ds.trajectories[0].len(), 201);
        assert_abs_diff_eq!(ds.horizon, 20.0, epsilon = 1e-12);
        let one = simulate_dataset(&AnalyticSystem::Fhn, &ics, 0.0, 0.1, 1, 10).unwrap();
        assert_eq!(one.trajectories[1].values, vec![vec![1.0, -1.0]]);
    }

    #[test]
    fn field_json_round_trip() {
        let f: VectorField = AnalyticSystem::lorenz96(6, 8.0).into();
        let s = serde_json::to_string(&f).unwrap();
        let g: VectorField = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
    }
}
