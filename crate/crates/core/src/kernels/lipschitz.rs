//! Empirical check of the kernel regularity condition
//! `d_{K_ii}(u, v) <= N_K |u - v|`, which makes every field in the RKHS
//! globally Lipschitz.
//!
//! The ratio `d_{K_ii}(u, v) / |u - v|` is sampled in two sweeps:
//! point pairs spread over boxes of growing radius (catches growth at
//! infinity, e.g. polynomial kernels), and pairs at shrinking separation
//! inside the unit box (catches blow-up at the diagonal, e.g. Laplacian).
//! A sweep fails when its maximum ratio grows by more than 10% per doubling.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Kernel, KernelSpec, ScalarKernel};
use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};

/// Maximum allowed growth of the max ratio per doubling of scale.
pub const GROWTH_TOLERANCE: f64 = 0.10;

/// Separation of the first small-scale probe.
const BASE_SEPARATION: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub kernel: KernelSpec,
    pub dim: usize,
    pub n_pairs: usize,
    pub radii: Vec<f64>,
    /// Max ratio per box radius.
    pub box_max_ratios: Vec<f64>,
    pub separations: Vec<f64>,
    /// Max ratio per small-scale separation.
    pub small_scale_max_ratios: Vec<f64>,
    /// Largest ratio seen in the box sweep (estimate of `N_K`).
    pub max_ratio: f64,
    /// Log-log slope of the box max ratio against radius.
    pub ratio_trend: f64,
    /// Log-log slope of the small-scale max ratio against 1 / separation.
    pub small_scale_trend: f64,
    pub verdict: Verdict,
    pub note: Option<String>,
}

/// Sample `d_{K_ii}(u,v) / |u - v|` and classify the kernel.
///
/// `dim` is the input dimension. Pairs with `u == v` are skipped.
pub fn check_lipschitz(
    spec: &KernelSpec,
    dim: usize,
    radii: &[f64],
    n_pairs: usize,
    seed: u64,
) -> Result<LipschitzReport> {
    if n_pairs < 100 {
        return Err(Error::Config(format!("n_pairs must be >= 100 (got {n_pairs})")));
    }
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[1] > w[0])) || radii[0] <= 0.0 {
        return Err(Error::Config(
            "sample_boxes must be at least two increasing positive radii".into(),
        ));
    }
    if dim == 0 {
        return Err(Error::Config("dimension must be >= 1".into()));
    }
    let out_dim = spec.mix.as_ref().map_or(1, Vec::len);
    let kernel = spec.build(dim, out_dim, &[], seed)?;
    let mut rng = rng_for(seed, Stream::Lipschitz, 0);

    let max_ratio_of = |kernel: &Kernel, pairs: &[(Vec<f64>, Vec<f64>)]| -> Result<f64> {
        let mut best: f64 = 0.0;
        for (u, v) in pairs {
            let dist = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dist == 0.0 {
                continue;
            }
            for i in 0..out_dim {
                let r = kernel.metric_sq(u, v, i, out_dim)?.sqrt() / dist;
                best = best.max(r);
            }
        }
        Ok(best)
    };

    let mut box_max_ratios = Vec::with_capacity(radii.len());
    for &r in radii {
        // half far pairs, half neighbours at a fixed separation so the
        // local constant is sampled everywhere in the box
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n_pairs)
            .map(|j| {
                let u: Vec<f64> = (0..dim).map(|_| rng.random_range(-r..r)).collect();
                let v = if j % 2 == 0 {
                    (0..dim).map(|_| rng.random_range(-r..r)).collect()
                } else {
                    neighbour(&u, BASE_SEPARATION, &mut rng)
                };
                (u, v)
            })
            .collect();
        box_max_ratios.push(max_ratio_of(&kernel, &pairs)?);
    }

    let separations: Vec<f64> = radii.iter().map(|r| BASE_SEPARATION * radii[0] / r).collect();
    let mut small_scale_max_ratios = Vec::with_capacity(separations.len());
    for &eps in &separations {
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n_pairs)
            .map(|_| {
                let u: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let v = neighbour(&u, eps, &mut rng);
                (u, v)
            })
            .collect();
        small_scale_max_ratios.push(max_ratio_of(&kernel, &pairs)?);
    }

    let scales_up: Vec<f64> = radii.to_vec();
    let scales_down: Vec<f64> = separations.iter().map(|e| 1.0 / e).collect();
    let box_ok = growth_ok(&scales_up, &box_max_ratios);
    let small_ok = growth_ok(&scales_down, &small_scale_max_ratios);
    let mut verdict = if box_ok && small_ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let mut note = None;
    if let Kernel::Separable(m) = &kernel {
        if let ScalarKernel::Matern { p, .. } = m.scalar {
            if p <= 1.5 {
                verdict = Verdict::Fail;
                note = Some(format!(
                    "matern kernels with p <= 3/2 are classified as not regular enough (p = {p})"
                ));
            }
        }
    }

    Ok(LipschitzReport {
        kernel: spec.clone(),
        dim,
        n_pairs,
        radii: radii.to_vec(),
        max_ratio: box_max_ratios.iter().copied().fold(0.0, f64::max),
        ratio_trend: loglog_slope(&scales_up, &box_max_ratios),
        small_scale_trend: loglog_slope(&scales_down, &small_scale_max_ratios),
        box_max_ratios,
        separations,
        small_scale_max_ratios,
        verdict,
        note,
    })
}

/// `u` moved by `eps` in a uniformly random direction.
fn neighbour<R: Rng>(u: &[f64], eps: f64, rng: &mut R) -> Vec<f64> {
    let dir: Vec<f64> = u.iter().map(|_| StandardNormal.sample(rng)).collect();
    let norm = dir.iter().map(|x: &f64| x * x).sum::<f64>().sqrt().max(1e-300);
    u.iter().zip(&dir).map(|(a, b)| a + eps * b / norm).collect()
}

/// True when the ratio never grows by more than the tolerance per doubling
/// of `scale` between consecutive probes.
fn growth_ok(scale: &[f64], ratio: &[f64]) -> bool {
    scale.windows(2).zip(ratio.windows(2)).all(|(s, r)| {
        if r[0] <= 0.0 {
            return r[1] <= 0.0;
        }
        let doublings = (s[1] / s[0]).log2();
        let per_doubling = (r[1] / r[0]).powf(1.0 / doublings);
        per_doubling <= 1.0 + GROWTH_TOLERANCE
    })
}

fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(_, &b)| b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    crate::eval::least_squares_line(&pts).map_or(0.0, |(slope, _)| slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    const RADII: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

    fn verdict(spec: KernelSpec) -> LipschitzReport {
        check_lipschitz(&spec, 2, &RADII, 1000, 7).unwrap()
    }

    #[test]
    fn classification_of_families() {
        assert_eq!(verdict(KernelSpec::new("gaussian").with_lengthscale(1.0)).verdict, Verdict::Pass);
        assert_eq!(verdict(KernelSpec::new("gaussian").with_lengthscale(0.1)).verdict, Verdict::Pass);
        assert_eq!(verdict(KernelSpec::new("linear")).verdict, Verdict::Pass);
        assert_eq!(verdict(KernelSpec::new("rational_quadratic")).verdict, Verdict::Pass);
        assert_eq!(verdict(KernelSpec::new("sinc")).verdict, Verdict::Pass);
        let mut m = KernelSpec::new("matern");
        m.params.p = Some(2.5);
        assert_eq!(verdict(m.clone()).verdict, Verdict::Pass);
        m.params.p = Some(1.5);
        let r = verdict(m.clone());
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.note.is_some());
        m.params.p = Some(0.5);
        assert_eq!(verdict(m).verdict, Verdict::Fail);
        assert_eq!(verdict(KernelSpec::new("laplacian")).verdict, Verdict::Fail);
        let mut poly = KernelSpec::new("polynomial");
        poly.params.degree = Some(2);
        assert_eq!(verdict(poly).verdict, Verdict::Fail);
    }

    #[test]
    fn linear_ratio_approaches_sqrt_lambda_max() {
        let mut spec = KernelSpec::new("linear");
        spec.params.a = Some(vec![vec![4.0, 0.0], vec![0.0, 1.0]]);
        let r = verdict(spec);
        assert!(r.max_ratio <= 2.0 + 1e-9);
        assert!(r.max_ratio > 1.98, "{}", r.max_ratio);
    }

    #[test]
    fn features_pass() {
        let spec = KernelSpec::gaussian_features(50).with_lengthscale(1.0).with_seed(1);
        assert_eq!(verdict(spec).verdict, Verdict::Pass);
    }

    #[test]
    fn too_few_pairs_rejected() {
        assert!(check_lipschitz(&KernelSpec::new("linear"), 2, &RADII, 10, 0).is_err());
    }
}
