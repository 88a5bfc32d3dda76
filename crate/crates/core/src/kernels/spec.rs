//! Declarative kernel specification, the JSON form used in configs:
//! `{"family": ..., "params": {...}, "mix": [[...]], "n_features": N, "seed": S}`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{FeatureMap, Kernel, MatrixKernel, Metric, ScalarKernel};
use crate::error::{Error, Result};
use crate::linalg::from_rows;

/// Family parameters. Unused keys for a family are ignored; unknown keys
/// are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengthscale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengthscales: Option<Vec<f64>>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    /// Lengthscale per coordinate as a fraction of the training data range,
    /// used when no explicit lengthscale is given (default 0.2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_augmented: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: String,
    #[serde(default)]
    pub params: KernelParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_features: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl KernelSpec {
    pub fn new(family: &str) -> Self {
        Self {
            family: family.to_string(),
            params: KernelParams::default(),
            mix: None,
            n_features: None,
            seed: None,
        }
    }

    /// Gaussian random Fourier features with data-driven lengthscales.
    pub fn gaussian_features(n_features: usize) -> Self {
        Self {
            n_features: Some(n_features),
            ..Self::new("gaussian")
        }
    }

    pub fn with_lengthscale(mut self, l: f64) -> Self {
        self.params.lengthscale = Some(l);
        self
    }

    pub fn with_lengthscales(mut self, ls: Vec<f64>) -> Self {
        self.params.lengthscales = Some(ls);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn is_explicit(&self) -> bool {
        self.n_features.is_some()
    }

    pub fn time_augmented(&self) -> bool {
        self.params.time_augmented.unwrap_or(false)
    }

    /// Quick structural validation that does not need training data.
    pub fn validate(&self) -> Result<()> {
        let known = [
            "linear",
            "gaussian",
            "rational_quadratic",
            "sinc",
            "matern",
            "laplacian",
            "polynomial",
        ];
        if !known.contains(&self.family.as_str()) {
            return Err(Error::Config(format!("unknown kernel family `{}`", self.family)));
        }
        if self.is_explicit() && self.family != "gaussian" {
            return Err(Error::Config(
                "explicit random features are only available for the gaussian family".into(),
            ));
        }
        if let Some(f) = self.params.range_fraction {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::Config("range_fraction must be positive".into()));
            }
        }
        Ok(())
    }

    /// Lengthscales per input coordinate from the training inputs' ranges.
    fn auto_lengthscales(&self, input_dim: usize, inputs: &[Vec<f64>]) -> Vec<f64> {
        let frac = self.params.range_fraction.unwrap_or(0.2);
        (0..input_dim)
            .map(|i| {
                let (lo, hi) = inputs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    (lo.min(x[i]), hi.max(x[i]))
                });
                let range = hi - lo;
                if range.is_finite() && range > 0.0 {
                    frac * range
                } else {
                    1.0
                }
            })
            .collect()
    }

    fn metric(&self, input_dim: usize, inputs: &[Vec<f64>], auto: bool) -> Result<Metric> {
        let p = &self.params;
        let metric = if let Some(a) = &p.a {
            Metric::Matrix(from_rows(a).map_err(Error::Config)?)
        } else if let Some(ls) = &p.lengthscales {
            Metric::Lengthscales(ls.clone())
        } else if let Some(l) = p.lengthscale {
            Metric::Isotropic(l)
        } else if auto {
            Metric::Lengthscales(self.auto_lengthscales(input_dim, inputs))
        } else {
            Metric::Identity
        };
        if let Some(d) = metric.dim() {
            if d != input_dim {
                return Err(Error::DimensionMismatch {
                    expected: input_dim,
                    got: d,
                });
            }
        }
        metric.validate()?;
        Ok(metric)
    }

    /// The scalar kernel described by a non-explicit spec.
    pub fn scalar_kernel(&self, input_dim: usize, inputs: &[Vec<f64>]) -> Result<ScalarKernel> {
        self.validate()?;
        let p = &self.params;
        let k = match self.family.as_str() {
            "linear" => ScalarKernel::Linear {
                metric: self.metric(input_dim, inputs, false)?,
            },
            "gaussian" => ScalarKernel::Gaussian {
                metric: self.metric(input_dim, inputs, true)?,
            },
            "rational_quadratic" => ScalarKernel::RationalQuadratic {
                theta: p.theta.unwrap_or(1.0),
            },
            "sinc" => ScalarKernel::Sinc {
                lengthscale: p.lengthscale.unwrap_or(1.0),
            },
            "matern" => ScalarKernel::Matern {
                p: p.p.unwrap_or(2.5),
                lengthscale: p.lengthscale.unwrap_or(1.0),
            },
            "laplacian" => ScalarKernel::Laplacian {
                theta: p.theta.unwrap_or(1.0),
            },
            "polynomial" => ScalarKernel::Polynomial {
                degree: p.degree.unwrap_or(2),
                offset: p.offset.unwrap_or(1.0),
            },
            other => return Err(Error::Config(format!("unknown kernel family `{other}`"))),
        };
        k.validate()?;
        Ok(k)
    }

    /// Resolve into a concrete kernel.
    ///
    /// `inputs` are the training inputs (state, plus time as the last
    /// coordinate for time-augmented specs); they set data-driven
    /// lengthscales and feature standardization. `output_dim` is the state
    /// dimension `d`; `default_seed` is used when the spec has no seed.
    pub fn build(&self, input_dim: usize, output_dim: usize, inputs: &[Vec<f64>], default_seed: u64) -> Result<Kernel> {
        self.validate()?;
        let mix = match &self.mix {
            Some(rows) => Some(from_rows(rows).map_err(Error::Config)?),
            None => None,
        };
        if let Some(n) = self.n_features {
            if let Some(m) = &mix {
                if m != &DMatrix::identity(output_dim, output_dim) {
                    return Err(Error::Config(
                        "explicit feature kernels use the identity mix".into(),
                    ));
                }
            }
            let cov = self.metric(input_dim, inputs, true)?.to_matrix(input_dim);
            let mut map = FeatureMap::sample(
                n,
                &cov,
                self.seed.unwrap_or(default_seed),
                self.time_augmented(),
                self.params.bias.unwrap_or(false),
            )?;
            if self.params.standardize.unwrap_or(false) {
                map.fit_standardization(inputs)?;
            }
            return Ok(Kernel::Explicit(map));
        }
        let scalar = self.scalar_kernel(input_dim, inputs)?;
        let mix = mix.unwrap_or_else(|| DMatrix::identity(output_dim, output_dim));
        if mix.nrows() != output_dim {
            return Err(Error::DimensionMismatch {
                expected: output_dim,
                got: mix.nrows(),
            });
        }
        Ok(Kernel::Separable(MatrixKernel::new(scalar, mix)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_field_names() {
        let json = r#"{"family":"gaussian","params":{"lengthscale":0.5},"mix":[[1,0],[0,2]],"n_features":null,"seed":3}"#;
        let spec: KernelSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.family, "gaussian");
        assert_eq!(spec.params.lengthscale, Some(0.5));
        assert_eq!(spec.seed, Some(3));
        let k = spec.build(2, 2, &[], 0).unwrap();
        match k {
            Kernel::Separable(m) => assert_eq!(m.mix[(1, 1)], 2.0),
            _ => panic!("expected separable"),
        }
        let out = serde_json::to_value(&spec).unwrap();
        assert!(out.get("family").is_some() && out.get("params").is_some() && out.get("mix").is_some());
    }

    #[test]
    fn unknown_family_and_params_rejected() {
        assert!(KernelSpec::new("spline").validate().is_err());
        let bad = r#"{"family":"gaussian","params":{"lenghtscale":1.0}}"#;
        assert!(serde_json::from_str::<KernelSpec>(bad).is_err());
        let mut feats = KernelSpec::gaussian_features(10);
        feats.family = "polynomial".into();
        assert!(feats.validate().is_err());
    }

    #[test]
    fn auto_lengthscale_is_fraction_of_range() {
        let inputs = vec![vec![0.0, -1.0], vec![10.0, 1.0]];
        let k = KernelSpec::new("gaussian").scalar_kernel(2, &inputs).unwrap();
        assert_eq!(
            k,
            ScalarKernel::Gaussian {
                metric: Metric::Lengthscales(vec![2.0, 0.4])
            }
        );
    }

    #[test]
    fn explicit_spec_is_deterministic_given_seed() {
        let spec = KernelSpec::gaussian_features(32).with_lengthscale(1.0).with_seed(4);
        let a = spec.build(2, 2, &[], 0).unwrap();
        let b = spec.build(2, 2, &[], 99).unwrap();
        assert_eq!(a, b);
    }
}
