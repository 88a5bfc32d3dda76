//! Scalar kernels `K1(u, v)` and their gradients in the first argument.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_psd, serde_rows, sym_eig_range};

/// Quadratic form `delta^T A delta` used by the linear and Gaussian kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `A = I`.
    Identity,
    /// `A = I / l^2`.
    Isotropic(f64),
    /// `A = diag(1 / l_i^2)`.
    Lengthscales(Vec<f64>),
    /// Arbitrary PSD `A`.
    Matrix(#[serde(with = "serde_rows")] DMatrix<f64>),
}

impl Metric {
    pub fn validate(&self) -> Result<()> {
        match self {
            Metric::Identity => Ok(()),
            Metric::Isotropic(l) => positive(*l, "lengthscale"),
            Metric::Lengthscales(ls) => ls.iter().try_for_each(|&l| positive(l, "lengthscale")),
            Metric::Matrix(a) => check_psd(a, "kernel matrix A"),
        }
    }

    /// Fixed input dimension, if the metric carries one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Metric::Identity | Metric::Isotropic(_) => None,
            Metric::Lengthscales(ls) => Some(ls.len()),
            Metric::Matrix(a) => Some(a.nrows()),
        }
    }

    /// `u^T A v`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            Metric::Identity => dot(u, v),
            Metric::Isotropic(l) => dot(u, v) / (l * l),
            Metric::Lengthscales(ls) => u
                .iter()
                .zip(v)
                .zip(ls)
                .map(|((a, b), l)| a * b / (l * l))
                .sum(),
            Metric::Matrix(a) => {
                let mut s = 0.0;
                for i in 0..u.len() {
                    for j in 0..v.len() {
                        s += u[i] * a[(i, j)] * v[j];
                    }
                }
                s
            }
        }
    }

    /// `(u - v)^T A (u - v)`.
    pub fn quad_diff(&self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            Metric::Identity => sq_dist(u, v),
            Metric::Isotropic(l) => sq_dist(u, v) / (l * l),
            Metric::Lengthscales(ls) => u
                .iter()
                .zip(v)
                .zip(ls)
                .map(|((a, b), l)| {
                    let t = (a - b) / l;
                    t * t
                })
                .sum(),
            Metric::Matrix(_) => {
                let delta: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
                self.bilinear(&delta, &delta)
            }
        }
    }

    /// `out = A x`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Metric::Identity => out.copy_from_slice(x),
            Metric::Isotropic(l) => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = xi / (l * l);
                }
            }
            Metric::Lengthscales(ls) => {
                for ((o, xi), l) in out.iter_mut().zip(x).zip(ls) {
                    *o = xi / (l * l);
                }
            }
            Metric::Matrix(a) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..x.len()).map(|j| a[(i, j)] * x[j]).sum();
                }
            }
        }
    }

    pub fn to_matrix(&self, d: usize) -> DMatrix<f64> {
        match self {
            Metric::Identity => DMatrix::identity(d, d),
            Metric::Isotropic(l) => DMatrix::identity(d, d) / (l * l),
            Metric::Lengthscales(ls) => {
                DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    ls.len(),
                    ls.iter().map(|l| 1.0 / (l * l)),
                ))
            }
            Metric::Matrix(a) => a.clone(),
        }
    }

    pub fn lambda_max(&self) -> f64 {
        match self {
            Metric::Identity => 1.0,
            Metric::Isotropic(l) => 1.0 / (l * l),
            Metric::Lengthscales(ls) => ls.iter().map(|l| 1.0 / (l * l)).fold(0.0, f64::max),
            Metric::Matrix(a) => sym_eig_range(a).1.max(0.0),
        }
    }
}

/// Scalar kernel families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScalarKernel {
    /// `u^T A v`.
    Linear { metric: Metric },
    /// `exp(-(u - v)^T A (u - v) / 2)`.
    Gaussian { metric: Metric },
    /// `theta / (|u - v|^2 + theta)`.
    RationalQuadratic { theta: f64 },
    /// `prod_i sin(r_i) / r_i` with `r_i = |u_i - v_i| / lengthscale`.
    Sinc { lengthscale: f64 },
    /// Matérn with smoothness `p` in {1/2, 3/2, 5/2}.
    Matern { p: f64, lengthscale: f64 },
    /// `exp(-|u - v| / theta)`.
    Laplacian { theta: f64 },
    /// `(u^T v + offset)^degree`.
    Polynomial { degree: u32, offset: f64 },
}

impl ScalarKernel {
    pub fn gaussian(lengthscale: f64) -> Self {
        ScalarKernel::Gaussian {
            metric: Metric::Isotropic(lengthscale),
        }
    }

    pub fn linear() -> Self {
        ScalarKernel::Linear {
            metric: Metric::Identity,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScalarKernel::Linear { .. } => "linear",
            ScalarKernel::Gaussian { .. } => "gaussian",
            ScalarKernel::RationalQuadratic { .. } => "rational_quadratic",
            ScalarKernel::Sinc { .. } => "sinc",
            ScalarKernel::Matern { .. } => "matern",
            ScalarKernel::Laplacian { .. } => "laplacian",
            ScalarKernel::Polynomial { .. } => "polynomial",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScalarKernel::Linear { metric } | ScalarKernel::Gaussian { metric } => metric.validate(),
            ScalarKernel::RationalQuadratic { theta } | ScalarKernel::Laplacian { theta } => {
                positive(*theta, "theta")
            }
            ScalarKernel::Sinc { lengthscale } => positive(*lengthscale, "lengthscale"),
            ScalarKernel::Matern { p, lengthscale } => {
                positive(*lengthscale, "lengthscale")?;
                if [0.5, 1.5, 2.5].contains(p) {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "matern smoothness p must be one of 0.5, 1.5, 2.5 (got {p})"
                    )))
                }
            }
            ScalarKernel::Polynomial { degree, offset } => {
                if *degree == 0 {
                    return Err(Error::Config("polynomial degree must be >= 1".into()));
                }
                if !(offset.is_finite() && *offset >= 0.0) {
                    return Err(Error::Config("polynomial offset must be >= 0".into()));
                }
                Ok(())
            }
        }
    }

    /// Input dimension fixed by the parameters, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ScalarKernel::Linear { metric } | ScalarKernel::Gaussian { metric } => metric.dim(),
            _ => None,
        }
    }

    /// Evaluate with dimension and finiteness checks.
    pub fn eval(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_points(u, v)?;
        Ok(self.k(u, v))
    }

    pub(crate) fn check_points(&self, u: &[f64], v: &[f64]) -> Result<()> {
        if u.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: u.len(),
                got: v.len(),
            });
        }
        if let Some(d) = self.dim() {
            if d != u.len() {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: u.len(),
                });
            }
        }
        if u.iter().chain(v).any(|x| !x.is_finite()) {
            return Err(Error::Config("kernel inputs must be finite".into()));
        }
        Ok(())
    }

    /// Unchecked evaluation.
    pub fn k(&self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            ScalarKernel::Linear { metric } => metric.bilinear(u, v),
            ScalarKernel::Gaussian { metric } => (-0.5 * metric.quad_diff(u, v)).exp(),
            ScalarKernel::RationalQuadratic { theta } => theta / (sq_dist(u, v) + theta),
            ScalarKernel::Sinc { lengthscale } => u
                .iter()
                .zip(v)
                .map(|(a, b)| sinc((a - b).abs() / lengthscale))
                .product(),
            ScalarKernel::Matern { p, lengthscale } => {
                matern(*p, sq_dist(u, v).sqrt() / lengthscale)
            }
            ScalarKernel::Laplacian { theta } => (-sq_dist(u, v).sqrt() / theta).exp(),
            ScalarKernel::Polynomial { degree, offset } => {
                (dot(u, v) + offset).powi(*degree as i32)
            }
        }
    }

    /// Whether [`ScalarKernel::grad_u_into`] is available everywhere.
    pub fn is_differentiable(&self) -> bool {
        !matches!(
            self,
            ScalarKernel::Laplacian { .. } | ScalarKernel::Matern { p: 0.5, .. }
        )
    }

    /// Gradient of `K1(u, v)` with respect to `u`, written to `out`.
    /// Returns `false` for families that are not differentiable at `u = v`.
    pub fn grad_u_into(&self, u: &[f64], v: &[f64], out: &mut [f64]) -> bool {
        match self {
            ScalarKernel::Linear { metric } => {
                metric.apply_into(v, out);
                true
            }
            ScalarKernel::Gaussian { metric } => {
                let k = self.k(u, v);
                let delta: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
                metric.apply_into(&delta, out);
                for o in out.iter_mut() {
                    *o *= -k;
                }
                true
            }
            ScalarKernel::RationalQuadratic { theta } => {
                let r2 = sq_dist(u, v);
                let c = -2.0 * theta / ((r2 + theta) * (r2 + theta));
                for ((o, a), b) in out.iter_mut().zip(u).zip(v) {
                    *o = c * (a - b);
                }
                true
            }
            ScalarKernel::Sinc { lengthscale } => {
                let vals: Vec<f64> = u
                    .iter()
                    .zip(v)
                    .map(|(a, b)| sinc((a - b) / lengthscale))
                    .collect();
                for (i, o) in out.iter_mut().enumerate() {
                    let x = (u[i] - v[i]) / lengthscale;
                    let others: f64 = vals
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, s)| s)
                        .product();
                    *o = others * sinc_prime(x) / lengthscale;
                }
                true
            }
            ScalarKernel::Matern { p, lengthscale } => {
                let r = sq_dist(u, v).sqrt() / lengthscale;
                // dk/dr divided by r, so that grad = (dk/dr / r) * delta / l^2
                let coef = if *p == 1.5 {
                    let a = 3f64.sqrt();
                    -a * a * (-a * r).exp()
                } else if *p == 2.5 {
                    let a = 5f64.sqrt();
                    -(a * a / 3.0) * (1.0 + a * r) * (-a * r).exp()
                } else {
                    return false;
                };
                for ((o, a), b) in out.iter_mut().zip(u).zip(v) {
                    *o = coef * (a - b) / (lengthscale * lengthscale);
                }
                true
            }
            ScalarKernel::Laplacian { .. } => false,
            ScalarKernel::Polynomial { degree, offset } => {
                let c = *degree as f64 * (dot(u, v) + offset).powi(*degree as i32 - 1);
                for (o, b) in out.iter_mut().zip(v) {
                    *o = c * b;
                }
                true
            }
        }
    }
}

fn positive(x: f64, what: &str) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be positive (got {x})")))
    }
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub(crate) fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

fn sinc_prime(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        -x / 3.0
    } else {
        (x * x.cos() - x.sin()) / (x * x)
    }
}

fn matern(p: f64, r: f64) -> f64 {
    if p == 0.5 {
        (-r).exp()
    } else if p == 1.5 {
        let a = 3f64.sqrt() * r;
        (1.0 + a) * (-a).exp()
    } else {
        let a = 5f64.sqrt() * r;
        (1.0 + a + a * a / 3.0) * (-a).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn families() -> Vec<ScalarKernel> {
        vec![
            ScalarKernel::linear(),
            ScalarKernel::gaussian(1.3),
            ScalarKernel::RationalQuadratic { theta: 0.7 },
            ScalarKernel::Sinc { lengthscale: 0.9 },
            ScalarKernel::Matern { p: 1.5, lengthscale: 1.1 },
            ScalarKernel::Matern { p: 2.5, lengthscale: 0.8 },
            ScalarKernel::Polynomial { degree: 3, offset: 1.0 },
        ]
    }

    #[test]
    fn worked_values() {
        let g = ScalarKernel::Gaussian {
            metric: Metric::Identity,
        };
        assert_eq!(g.eval(&[0.0], &[0.0]).unwrap(), 1.0);
        let l = ScalarKernel::linear();
        assert_eq!(l.eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let rq = ScalarKernel::RationalQuadratic { theta: 1.0 };
        assert_eq!(rq.eval(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ScalarKernel::RationalQuadratic { theta: 0.0 }.validate().is_err());
        assert!(ScalarKernel::Matern { p: 1.0, lengthscale: 1.0 }.validate().is_err());
        let bad = ScalarKernel::Gaussian {
            metric: Metric::Matrix(DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0])),
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = ScalarKernel::Gaussian {
            metric: Metric::Lengthscales(vec![1.0, 2.0]),
        };
        assert!(matches!(
            g.eval(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(g.eval(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let u = [0.3, -0.7];
        let v = [-0.2, 0.4];
        for k in families() {
            let mut g = [0.0; 2];
            assert!(k.grad_u_into(&u, &v, &mut g), "{}", k.name());
            for i in 0..2 {
                let eps = 1e-6;
                let mut up = u;
                let mut dn = u;
                up[i] += eps;
                dn[i] -= eps;
                let fd = (k.k(&up, &v) - k.k(&dn, &v)) / (2.0 * eps);
                assert_abs_diff_eq!(g[i], fd, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn non_differentiable_families_flagged() {
        let mut g = [0.0];
        assert!(!ScalarKernel::Laplacian { theta: 1.0 }.grad_u_into(&[0.0], &[1.0], &mut g));
        assert!(!ScalarKernel::Matern { p: 0.5, lengthscale: 1.0 }.is_differentiable());
    }
}
