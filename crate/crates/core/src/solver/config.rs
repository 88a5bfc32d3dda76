use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

/// How the first field estimate `f0` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    GradientMatching,
    ZeroField,
}

/// Penalty-method hyperparameters. JSON keys are exactly the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Euler grid step.
    pub h: f64,
    /// Penalty growth rate: `gamma <- min(gamma (1 + rho), gamma_max)`.
    pub rho: f64,
    /// RKHS regularization weight.
    pub lambda: f64,
    pub gamma0: f64,
    pub gamma_max: f64,
    pub max_iters: usize,
    /// Stop when the relative field change drops below this.
    pub early_stop_eps: f64,
    pub kernel: KernelSpec,
    pub seed: u64,
    pub init: InitKind,
}

pub const CONFIG_KEYS: [&str; 10] = [
    "h",
    "rho",
    "lambda",
    "gamma0",
    "gamma_max",
    "max_iters",
    "early_stop_eps",
    "kernel",
    "seed",
    "init",
];

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            h: 0.1,
            rho: 0.1,
            lambda: 1e-4,
            gamma0: 1.0,
            gamma_max: 1e8,
            max_iters: 500,
            early_stop_eps: 1e-3,
            kernel: KernelSpec::gaussian_features(200),
            seed: 0,
            init: InitKind::GradientMatching,
        }
    }
}

impl SolverConfig {
    /// Parse a complete config; a missing key is reported by name.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        Self::from_json_value(value)
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Config("solver config must be a JSON object".into()))?;
        if let Some(missing) = CONFIG_KEYS.iter().find(|k| !obj.contains_key(**k)) {
            return Err(Error::MissingKey((*missing).to_string()));
        }
        let cfg: SolverConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("h", self.h),
            ("rho", self.rho),
            ("lambda", self.lambda),
            ("gamma0", self.gamma0),
            ("gamma_max", self.gamma_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive (got {v})")));
            }
        }
        if self.gamma_max < self.gamma0 {
            return Err(Error::Config("gamma_max must be >= gamma0".into()));
        }
        if !(self.early_stop_eps > 0.0 && self.early_stop_eps < 1.0) {
            return Err(Error::Config(format!(
                "early_stop_eps must be in (0, 1) (got {})",
                self.early_stop_eps
            )));
        }
        self.kernel.validate()
    }

    /// The penalty weight used at iteration `s` (0-based).
    pub fn gamma_at(&self, s: usize) -> f64 {
        let mut g = self.gamma0;
        for _ in 0..s {
            g = next_gamma(g, self.rho, self.gamma_max);
        }
        g
    }
}

pub(crate) fn next_gamma(gamma: f64, rho: f64, gamma_max: f64) -> f64 {
    (gamma * (1.0 + rho)).min(gamma_max)
}
