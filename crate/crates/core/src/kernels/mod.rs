//! Scalar, separable matrix-valued and explicit-feature kernels.

mod features;
mod lipschitz;
mod scalar;
mod spec;

pub use features::{FeatureMap, Standardization};
pub use lipschitz::{check_lipschitz, LipschitzReport, Verdict};
pub use scalar::{Metric, ScalarKernel};
pub use spec::{KernelParams, KernelSpec};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_psd, serde_rows};

/// Separable matrix-valued kernel `K(x, y) = K1(x, y) A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixKernel {
    pub scalar: ScalarKernel,
    #[serde(with = "serde_rows")]
    pub mix: DMatrix<f64>,
}

impl MatrixKernel {
    pub fn new(scalar: ScalarKernel, mix: DMatrix<f64>) -> Result<Self> {
        scalar.validate()?;
        check_psd(&mix, "mix matrix")?;
        Ok(Self { scalar, mix })
    }

    /// `K1 * I_d`.
    pub fn identity(scalar: ScalarKernel, d: usize) -> Result<Self> {
        Self::new(scalar, DMatrix::identity(d, d))
    }

    pub fn output_dim(&self) -> usize {
        self.mix.nrows()
    }

    pub fn eval(&self, u: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
        Ok(&self.mix * self.scalar.eval(u, v)?)
    }
}

/// A kernel usable by the solver: separable with an analytic scalar part,
/// or the explicit kernel `phi(u)^T phi(v) I_d` of a feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Separable(MatrixKernel),
    Explicit(FeatureMap),
}

impl Kernel {
    /// Scalar part evaluated on full input vectors.
    pub fn scalar(&self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            Kernel::Separable(m) => m.scalar.k(u, v),
            Kernel::Explicit(f) => f.kernel(u, v),
        }
    }

    fn check_inputs(&self, u: &[f64], v: &[f64]) -> Result<()> {
        match self {
            Kernel::Separable(m) => m.scalar.check_points(u, v),
            Kernel::Explicit(f) => {
                for x in [u, v] {
                    if x.len() != f.input_dim {
                        return Err(Error::DimensionMismatch {
                            expected: f.input_dim,
                            got: x.len(),
                        });
                    }
                }
                Ok(())
            }
        }
    }

    /// Gradient of the scalar part in its first argument. Returns false for
    /// non-differentiable families.
    pub fn grad_u_into(&self, u: &[f64], v: &[f64], out: &mut [f64]) -> bool {
        match self {
            Kernel::Separable(m) => m.scalar.grad_u_into(u, v, out),
            Kernel::Explicit(f) => {
                let nf = f.n_features();
                let mut jac = DMatrix::zeros(nf, f.input_dim);
                f.jacobian_into(u, &mut jac);
                let mut pv = vec![0.0; nf];
                f.features_into(v, &mut pv);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..nf).map(|r| jac[(r, i)] * pv[r]).sum();
                }
                true
            }
        }
    }

    pub fn is_differentiable(&self) -> bool {
        match self {
            Kernel::Separable(m) => m.scalar.is_differentiable(),
            Kernel::Explicit(_) => true,
        }
    }

    /// Input dimension if fixed by the kernel.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            Kernel::Separable(m) => m.scalar.dim(),
            Kernel::Explicit(f) => Some(f.input_dim),
        }
    }

    pub fn time_augmented(&self) -> bool {
        matches!(self, Kernel::Explicit(f) if f.time_augmented)
    }

    /// Diagonal of the mix matrix (all ones for explicit kernels).
    fn mix_diag(&self, d: usize) -> Vec<f64> {
        match self {
            Kernel::Separable(m) => m.mix.diagonal().iter().copied().collect(),
            Kernel::Explicit(_) => vec![1.0; d],
        }
    }

    /// `d_{K_ii}^2(u, v) = K_ii(u,u) - 2 K_ii(u,v) + K_ii(v,v)`, clamped at 0.
    pub fn metric_sq(&self, u: &[f64], v: &[f64], i: usize, d: usize) -> Result<f64> {
        self.check_inputs(u, v)?;
        let diag = self.mix_diag(d);
        let aii = *diag.get(i).ok_or(Error::DimensionMismatch {
            expected: diag.len(),
            got: i + 1,
        })?;
        let raw = aii * (self.scalar(u, u) - 2.0 * self.scalar(u, v) + self.scalar(v, v));
        Ok(if raw < 1e-12 { raw.max(0.0) } else { raw })
    }

    /// Block Gram matrix with `d x d` blocks `K(x_a, x_b)`, assembled from
    /// pointwise kernel evaluations.
    pub fn gram(&self, points: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
        let mix = match self {
            Kernel::Separable(m) => {
                if m.output_dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: m.output_dim(),
                        got: d,
                    });
                }
                m.mix.clone()
            }
            Kernel::Explicit(_) => DMatrix::identity(d, d),
        };
        if let Some(p) = points.first() {
            for q in points {
                self.check_inputs(p, q)?;
            }
        }
        let n = points.len();
        let mut g = DMatrix::zeros(n * d, n * d);
        for a in 0..n {
            for b in a..n {
                let k = self.scalar(&points[a], &points[b]);
                for i in 0..d {
                    for j in 0..d {
                        let v = k * mix[(i, j)];
                        g[(a * d + i, b * d + j)] = v;
                        g[(b * d + j, a * d + i)] = v;
                    }
                }
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eig_range;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn separable_matrix_values() {
        let g = MatrixKernel::identity(ScalarKernel::gaussian(1.0), 2).unwrap();
        assert_eq!(g.eval(&[0.4, 1.0], &[0.4, 1.0]).unwrap(), DMatrix::identity(2, 2));
        let lin = MatrixKernel::new(
            ScalarKernel::linear(),
            DMatrix::from_diagonal(&nalgebra::dvector![2.0, 3.0]),
        )
        .unwrap();
        let m = lin.eval(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(m, DMatrix::from_diagonal(&nalgebra::dvector![2.0, 3.0]));
    }

    #[test]
    fn matrix_kernel_transpose_symmetry() {
        let mut rng = crate::rng::rng_from_seed(1);
        let mix = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let k = MatrixKernel::new(ScalarKernel::gaussian(0.8), mix).unwrap();
        for _ in 0..50 {
            let u: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let v: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = k.eval(&u, &v).unwrap();
            let b = k.eval(&v, &u).unwrap();
            assert!((a.transpose() - b).amax() < 1e-15);
        }
    }

    #[test]
    fn mix_must_be_psd() {
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(MatrixKernel::new(ScalarKernel::linear(), bad).is_err());
    }

    #[test]
    fn metric_values() {
        let k = Kernel::Separable(MatrixKernel::identity(ScalarKernel::Gaussian { metric: Metric::Identity }, 1).unwrap());
        assert_eq!(k.metric_sq(&[0.7], &[0.7], 0, 1).unwrap(), 0.0);
        let v = k.metric_sq(&[0.0], &[1.0], 0, 1).unwrap();
        let expected = 2.0 - 2.0 * (-0.5f64).exp();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.7869).abs() < 1e-4);
    }

    #[test]
    fn gaussian_metric_bounded_by_quadratic() {
        // P(u,v) <= 2 lambda_max(A) |u - v|^2
        let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.3, 0.3, 0.6]);
        let lmax = sym_eig_range(&a).1;
        let k = Kernel::Separable(
            MatrixKernel::identity(ScalarKernel::Gaussian { metric: Metric::Matrix(a) }, 2).unwrap(),
        );
        let mut rng = crate::rng::rng_from_seed(2);
        for _ in 0..10_000 {
            let u: Vec<f64> = (0..2).map(|_| rng.random_range(-4.0..4.0)).collect();
            let v: Vec<f64> = (0..2).map(|_| rng.random_range(-4.0..4.0)).collect();
            let dist2: f64 = u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            for i in 0..2 {
                assert!(k.metric_sq(&u, &v, i, 2).unwrap() <= 2.0 * lmax * dist2 + 1e-12);
            }
        }
    }

    #[test]
    fn gram_small_cases() {
        let k = Kernel::Separable(MatrixKernel::identity(ScalarKernel::gaussian(1.0), 2).unwrap());
        assert_eq!(k.gram(&[vec![0.3, 0.1]], 2).unwrap(), DMatrix::identity(2, 2));
        let g = k.gram(&[vec![1.0, 2.0], vec![1.0, 2.0]], 2).unwrap();
        assert_eq!(g.view((0, 0), (2, 4)), g.view((2, 0), (2, 4)));
        assert!(g.clone().cholesky().is_none() || sym_eig_range(&g).0 < 1e-12);
    }

    #[test]
    fn gram_psd_on_random_points() {
        let mut rng = crate::rng::rng_from_seed(4);
        let k = Kernel::Separable(MatrixKernel::identity(ScalarKernel::gaussian(0.9), 2).unwrap());
        let pts: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let g = k.gram(&pts, 2).unwrap();
        let (min, max) = sym_eig_range(&g);
        assert!(min >= -1e-8 * max);
    }

    #[test]
    fn explicit_gram_matches_feature_product() {
        let map = FeatureMap::gaussian(64, &[0.8, 1.2], 9, false, true).unwrap();
        let mut rng = crate::rng::rng_from_seed(5);
        let pts: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let phi = map.feature_matrix(&pts);
        let via_features = &phi * phi.transpose();
        let g = Kernel::Explicit(map).gram(&pts, 1).unwrap();
        assert!((g - via_features).amax() < 1e-10);
    }

    fn any_kernel() -> impl Strategy<Value = ScalarKernel> {
        prop_oneof![
            Just(ScalarKernel::linear()),
            (0.2f64..3.0).prop_map(ScalarKernel::gaussian),
            (0.1f64..3.0).prop_map(|theta| ScalarKernel::RationalQuadratic { theta }),
            (0.2f64..3.0).prop_map(|lengthscale| ScalarKernel::Sinc { lengthscale }),
            (0.2f64..3.0).prop_map(|lengthscale| ScalarKernel::Matern { p: 2.5, lengthscale }),
            (0.2f64..3.0).prop_map(|lengthscale| ScalarKernel::Matern { p: 1.5, lengthscale }),
            (0.2f64..3.0).prop_map(|theta| ScalarKernel::Laplacian { theta }),
            (1u32..4).prop_map(|degree| ScalarKernel::Polynomial { degree, offset: 1.0 }),
        ]
    }

    proptest! {
        #[test]
        fn scalar_kernels_are_symmetric(
            k in any_kernel(),
            u in prop::collection::vec(-5.0f64..5.0, 3),
            v in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let a = k.eval(&u, &v).unwrap();
            let b = k.eval(&v, &u).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn metric_is_nonnegative_and_zero_on_diagonal(
            k in any_kernel(),
            u in prop::collection::vec(-5.0f64..5.0, 2),
            v in prop::collection::vec(-5.0f64..5.0, 2),
        ) {
            let kern = Kernel::Separable(MatrixKernel::identity(k, 2).unwrap());
            prop_assert!(kern.metric_sq(&u, &v, 0, 2).unwrap() >= 0.0);
            prop_assert_eq!(kern.metric_sq(&u, &u, 1, 2).unwrap(), 0.0);
        }

        #[test]
        fn gram_is_psd(
            k in any_kernel(),
            d in 1usize..=6,
            n in 1usize..=50,
            seed in 0u64..1000,
        ) {
            let mut rng = crate::rng::rng_from_seed(seed);
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let kern = Kernel::Separable(MatrixKernel::identity(k, 1).unwrap());
            let g = kern.gram(&pts, 1).unwrap();
            let (min, max) = sym_eig_range(&g);
            prop_assert!(min >= -1e-8 * max.abs().max(1e-300), "min {min} max {max}");
        }
    }
}
