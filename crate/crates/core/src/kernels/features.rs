//! Explicit random Fourier feature maps.
//!
//! Each sampled frequency `w_j` contributes the pair
//! `(cos(w_j . x + b_j), sin(w_j . x + b_j)) / sqrt(n_freq)`, so that
//! `phi(u) . phi(v) = mean_j cos(w_j . (u - v))`, a Monte-Carlo estimate of the
//! Gaussian kernel whose spectral density the frequencies are drawn from.
//! Optionally the trigonometric features are standardized with statistics
//! from training points, and a constant feature is appended.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::serde_rows;
use crate::rng::{rng_for, Stream};

/// Per-feature centering and scaling learned from training points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    /// Length of the input vector, including the time coordinate when
    /// `time_augmented` is set (time is the last coordinate).
    pub input_dim: usize,
    pub time_augmented: bool,
    pub seed: u64,
    /// `n_freq x input_dim`.
    #[serde(with = "serde_rows")]
    pub frequencies: DMatrix<f64>,
    pub phases: Vec<f64>,
    pub bias: bool,
    pub standardization: Option<Standardization>,
}

impl FeatureMap {
    /// Sample a map with `n_features` trigonometric features (must be even)
    /// approximating the Gaussian kernel with frequency covariance `cov`
    /// (`A` in `exp(-(u-v)^T A (u-v) / 2)`).
    pub fn sample(
        n_features: usize,
        cov: &DMatrix<f64>,
        seed: u64,
        time_augmented: bool,
        bias: bool,
    ) -> Result<Self> {
        if n_features == 0 || n_features % 2 != 0 {
            return Err(Error::Config(format!(
                "n_features must be a positive even number (got {n_features})"
            )));
        }
        crate::linalg::check_psd(cov, "feature covariance")?;
        let input_dim = cov.nrows();
        let n_freq = n_features / 2;
        // frequencies w = S z with S S^T = cov, S the symmetric square root
        let eig = cov.clone().symmetric_eigen();
        let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let s = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
        let diagonal = (0..input_dim).all(|i| (0..input_dim).all(|j| i == j || cov[(i, j)] == 0.0));

        let mut rng = rng_for(seed, Stream::Features, 0);
        let mut frequencies = DMatrix::zeros(n_freq, input_dim);
        let mut phases = Vec::with_capacity(n_freq);
        let mut z = vec![0.0; input_dim];
        for j in 0..n_freq {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            for i in 0..input_dim {
                frequencies[(j, i)] = if diagonal {
                    cov[(i, i)].sqrt() * z[i]
                } else {
                    (0..input_dim).map(|k| s[(i, k)] * z[k]).sum()
                };
            }
            phases.push(rng.random_range(0.0..std::f64::consts::TAU));
        }
        Ok(Self {
            input_dim,
            time_augmented,
            seed,
            frequencies,
            phases,
            bias,
            standardization: None,
        })
    }

    /// Gaussian features with per-coordinate lengthscales.
    pub fn gaussian(
        n_features: usize,
        lengthscales: &[f64],
        seed: u64,
        time_augmented: bool,
        bias: bool,
    ) -> Result<Self> {
        if lengthscales.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return Err(Error::Config("lengthscales must be positive".into()));
        }
        let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            lengthscales.len(),
            lengthscales.iter().map(|l| 1.0 / (l * l)),
        ));
        Self::sample(n_features, &cov, seed, time_augmented, bias)
    }

    /// Build a map from explicit frequencies and phases.
    pub fn from_parts(frequencies: DMatrix<f64>, phases: Vec<f64>, time_augmented: bool, bias: bool) -> Result<Self> {
        if phases.len() != frequencies.nrows() {
            return Err(Error::DimensionMismatch {
                expected: frequencies.nrows(),
                got: phases.len(),
            });
        }
        Ok(Self {
            input_dim: frequencies.ncols(),
            time_augmented,
            seed: 0,
            frequencies,
            phases,
            bias,
            standardization: None,
        })
    }

    pub fn n_freq(&self) -> usize {
        self.frequencies.nrows()
    }

    /// Total feature count `n_F`.
    pub fn n_features(&self) -> usize {
        2 * self.n_freq() + usize::from(self.bias)
    }

    /// Dimension of the spatial part of the input.
    pub fn state_dim(&self) -> usize {
        self.input_dim - usize::from(self.time_augmented)
    }

    fn amplitude(&self) -> f64 {
        1.0 / (self.n_freq() as f64).sqrt()
    }

    /// Assemble the input vector `[x, t]` and check it against the map.
    pub fn input(&self, x: &[f64], t: Option<f64>) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        match (self.time_augmented, t) {
            (true, Some(t)) => {
                let mut v = x.to_vec();
                v.push(t);
                Ok(v)
            }
            (false, None) => Ok(x.to_vec()),
            (true, None) => Err(Error::Usage("time-augmented feature map requires a time".into())),
            (false, Some(_)) => Err(Error::Usage(
                "time supplied to an autonomous feature map".into(),
            )),
        }
    }

    /// `phi(x[, t])`.
    pub fn features(&self, x: &[f64], t: Option<f64>) -> Result<Vec<f64>> {
        let input = self.input(x, t)?;
        let mut out = vec![0.0; self.n_features()];
        self.features_into(&input, &mut out);
        Ok(out)
    }

    /// Unchecked feature evaluation on a full input vector.
    pub fn features_into(&self, input: &[f64], out: &mut [f64]) {
        let amp = self.amplitude();
        let nf = self.n_freq();
        for j in 0..nf {
            let mut theta = self.phases[j];
            for (i, xi) in input.iter().enumerate() {
                theta += self.frequencies[(j, i)] * xi;
            }
            let (s, c) = theta.sin_cos();
            out[2 * j] = amp * c;
            out[2 * j + 1] = amp * s;
        }
        if let Some(st) = &self.standardization {
            for (k, o) in out.iter_mut().take(2 * nf).enumerate() {
                *o = (*o - st.mean[k]) / st.scale[k];
            }
        }
        if self.bias {
            out[2 * nf] = 1.0;
        }
    }

    /// Feature Jacobian `d phi / d input` (`n_F x input_dim`), unchecked.
    pub fn jacobian_into(&self, input: &[f64], out: &mut DMatrix<f64>) {
        let amp = self.amplitude();
        let nf = self.n_freq();
        out.fill(0.0);
        for j in 0..nf {
            let mut theta = self.phases[j];
            for (i, xi) in input.iter().enumerate() {
                theta += self.frequencies[(j, i)] * xi;
            }
            let (s, c) = theta.sin_cos();
            let (sc, ss) = match &self.standardization {
                Some(st) => (st.scale[2 * j], st.scale[2 * j + 1]),
                None => (1.0, 1.0),
            };
            for i in 0..self.input_dim {
                let w = self.frequencies[(j, i)];
                out[(2 * j, i)] = -amp * s * w / sc;
                out[(2 * j + 1, i)] = amp * c * w / ss;
            }
        }
    }

    /// Feature matrix with one row per input vector.
    pub fn feature_matrix(&self, inputs: &[Vec<f64>]) -> DMatrix<f64> {
        let nf = self.n_features();
        let mut m = DMatrix::zeros(inputs.len(), nf);
        let mut row = vec![0.0; nf];
        for (r, input) in inputs.iter().enumerate() {
            self.features_into(input, &mut row);
            for (c, v) in row.iter().enumerate() {
                m[(r, c)] = *v;
            }
        }
        m
    }

    /// Learn per-feature mean and standard deviation from training inputs.
    pub fn fit_standardization(&mut self, inputs: &[Vec<f64>]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::InsufficientData(
                "standardization needs at least one training point".into(),
            ));
        }
        self.standardization = None;
        let m = self.feature_matrix(inputs);
        let n = inputs.len() as f64;
        let ntrig = 2 * self.n_freq();
        let mut mean = vec![0.0; ntrig];
        let mut scale = vec![1.0; ntrig];
        for k in 0..ntrig {
            let col = m.column(k);
            let mu = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            mean[k] = mu;
            scale[k] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        self.standardization = Some(Standardization { mean, scale });
        Ok(())
    }

    /// Explicit kernel `phi(u) . phi(v)` evaluated pointwise.
    pub fn kernel(&self, u: &[f64], v: &[f64]) -> f64 {
        let nf = self.n_features();
        let mut a = vec![0.0; nf];
        let mut b = vec![0.0; nf];
        self.features_into(u, &mut a);
        self.features_into(v, &mut b);
        a.iter().zip(&b).map(|(x, y)| x * y).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_frequencies_give_constant_features() {
        let map = FeatureMap::from_parts(DMatrix::zeros(3, 2), vec![0.0; 3], false, false).unwrap();
        let a = map.features(&[0.3, -1.0], None).unwrap();
        let b = map.features(&[5.0, 2.0], None).unwrap();
        assert_eq!(a, b);
        let amp = 1.0 / 3f64.sqrt();
        for j in 0..3 {
            assert_eq!(a[2 * j], amp);
            assert_eq!(a[2 * j + 1], 0.0);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = FeatureMap::gaussian(64, &[0.5, 2.0], 11, false, false).unwrap();
        let b = FeatureMap::gaussian(64, &[0.5, 2.0], 11, false, false).unwrap();
        assert_eq!(a, b);
        let x = [0.1, 0.2];
        assert_eq!(a.features(&x, None).unwrap(), b.features(&x, None).unwrap());
        let c = FeatureMap::gaussian(64, &[0.5, 2.0], 12, false, false).unwrap();
        assert_ne!(a.frequencies, c.frequencies);
    }

    #[test]
    fn time_argument_must_match_the_map() {
        let auto = FeatureMap::gaussian(8, &[1.0], 1, false, false).unwrap();
        assert!(matches!(auto.features(&[0.0], Some(1.0)), Err(Error::Usage(_))));
        let timed = FeatureMap::gaussian(8, &[1.0, 1.0], 1, true, false).unwrap();
        assert!(timed.features(&[0.0], Some(1.0)).is_ok());
        assert!(timed.features(&[0.0], None).is_err());
    }

    #[test]
    fn odd_feature_count_rejected() {
        assert!(FeatureMap::gaussian(7, &[1.0], 1, false, false).is_err());
    }

    #[test]
    fn standardized_features_have_unit_scale_on_training_data() {
        let mut map = FeatureMap::gaussian(10, &[1.0], 3, false, true).unwrap();
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.1]).collect();
        map.fit_standardization(&pts).unwrap();
        let m = map.feature_matrix(&pts);
        for k in 0..10 {
            let col = m.column(k);
            let mu = col.mean();
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 50.0;
            assert!(mu.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
        assert!(m.column(10).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut map = FeatureMap::gaussian(20, &[0.7, 1.3], 5, false, true).unwrap();
        map.fit_standardization(&[vec![0.0, 0.0], vec![1.0, 0.5], vec![-0.5, 2.0]])
            .unwrap();
        let x = [0.2, -0.4];
        let mut jac = DMatrix::zeros(map.n_features(), 2);
        map.jacobian_into(&x, &mut jac);
        let eps = 1e-6;
        for i in 0..2 {
            let mut up = x;
            let mut dn = x;
            up[i] += eps;
            dn[i] -= eps;
            let fu = map.features(&up, None).unwrap();
            let fd = map.features(&dn, None).unwrap();
            for k in 0..map.n_features() {
                let num = (fu[k] - fd[k]) / (2.0 * eps);
                assert!((num - jac[(k, i)]).abs() < 1e-7);
            }
        }
    }
}
