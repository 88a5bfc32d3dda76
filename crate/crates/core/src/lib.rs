//! Nonparametric ODE learning in a vector-valued RKHS.
//!
//! Given noisy, possibly sparse and irregularly sampled trajectories of an
//! unknown system `x' = f(t, x)`, this crate estimates `f` by alternating
//! between a linearized latent-state solve on an Euler grid and a kernel
//! ridge regression of the vector field, while a penalty weight on the
//! Euler constraints is driven upward.
//!
//! Modules:
//! - [`kernels`]: scalar, separable matrix-valued and random-feature kernels,
//!   plus an empirical Lipschitz-regularity checker.
//! - [`data`]: trajectories, datasets, time grids, sample weights, CSV I/O.
//! - [`ode`]: vector fields (learned or analytic), Euler integration and the
//!   reference benchmark systems.
//! - [`solver`]: gradient-matching initialization and the penalty method.
//! - [`eval`]: error metrics, noise sweeps and the convergence experiment.
//! - [`cli`]: the command-line front end.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod linalg;
pub mod ode;
pub mod rng;
pub mod solver;

pub use data::{Dataset, TimeGrid, Trajectory};
pub use error::{Error, Result};
pub use kernels::{FeatureMap, Kernel, KernelSpec, MatrixKernel, ScalarKernel};
pub use ode::{AnalyticSystem, VectorField};
pub use solver::{penalty_fit, FitResult, SolverConfig};
