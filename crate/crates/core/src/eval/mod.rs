//! Error metrics and experiment drivers.

mod convergence;
mod sweep;

pub use convergence::{convergence_experiment, ConvergenceConfig, ConvergenceReport, ConvergenceRow};
pub use sweep::{noise_sweep, write_sweep_csv, Protocol, SigmaSummary, SweepCell, SweepReport};

pub use crate::solver::constraint_residual;

use crate::data::Trajectory;
use crate::error::{Error, Result};

/// `sqrt(sum_{i>=2} (t_i - t_{i-1}) |y_i - yhat_i|^2)` over shared times.
pub fn err_metric(times: &[f64], pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != times.len() || truth.len() != times.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            got: if pred.len() != times.len() { pred.len() } else { truth.len() },
        });
    }
    if times.len() < 2 {
        return Err(Error::InsufficientData("Err needs at least two time points".into()));
    }
    let mut sum = 0.0;
    for i in 1..times.len() {
        if pred[i].len() != truth[i].len() {
            return Err(Error::DimensionMismatch {
                expected: truth[i].len(),
                got: pred[i].len(),
            });
        }
        let sq: f64 = pred[i].iter().zip(&truth[i]).map(|(a, b)| (a - b) * (a - b)).sum();
        sum += (times[i] - times[i - 1]) * sq;
    }
    Ok(sum.sqrt())
}

/// [`err_metric`] for two trajectories observed at the same times.
pub fn err_between(pred: &Trajectory, truth: &Trajectory) -> Result<f64> {
    if pred.times.len() != truth.times.len()
        || pred.times.iter().zip(&truth.times).any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + b.abs()))
    {
        return Err(Error::Config("Err compares trajectories at identical times".into()));
    }
    err_metric(&truth.times, &pred.values, &truth.values)
}

/// Value of the piecewise-linear interpolant of `(times, values)` at `t`.
fn interpolate(times: &[f64], values: &[Vec<f64>], t: f64) -> Vec<f64> {
    let j = times.partition_point(|&s| s <= t);
    if j == 0 {
        return values[0].clone();
    }
    if j == times.len() {
        return values[j - 1].clone();
    }
    let a = (t - times[j - 1]) / (times[j] - times[j - 1]);
    values[j - 1]
        .iter()
        .zip(&values[j])
        .map(|(x, y)| x + a * (y - x))
        .collect()
}

/// `int_{t0}^{t1} |xhat(t) - xstar(t)|^2 dt` for piecewise-linear curves.
///
/// The difference is linear on every interval of the union of both node
/// sets, so each interval contributes exactly `dt (a^2 + a b + b^2) / 3`.
pub fn l2_sq_distance(xhat: &Trajectory, xstar: &Trajectory, t0: f64, t1: f64) -> Result<f64> {
    if !(t1 >= t0) {
        return Err(Error::Config(format!("empty interval [{t0}, {t1}]")));
    }
    for (name, c) in [("estimate", xhat), ("reference", xstar)] {
        let tol = 1e-9 * (1.0 + t1.abs());
        if c.is_empty() || c.first_time() > t0 + tol || c.last_time() < t1 - tol {
            return Err(Error::Config(format!("{name} curve does not cover [{t0}, {t1}]")));
        }
        if c.dim() != xhat.dim() {
            return Err(Error::DimensionMismatch {
                expected: xhat.dim(),
                got: c.dim(),
            });
        }
    }
    let mut nodes: Vec<f64> = xhat
        .times
        .iter()
        .chain(&xstar.times)
        .copied()
        .filter(|&t| t > t0 && t < t1)
        .collect();
    nodes.push(t0);
    nodes.push(t1);
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    let diff = |t: f64| -> Vec<f64> {
        let a = interpolate(&xhat.times, &xhat.values, t);
        let b = interpolate(&xstar.times, &xstar.values, t);
        a.iter().zip(&b).map(|(x, y)| x - y).collect()
    };
    let mut total = 0.0;
    let mut prev = diff(nodes[0]);
    for w in nodes.windows(2) {
        let next = diff(w[1]);
        let dt = w[1] - w[0];
        let seg: f64 = prev.iter().zip(&next).map(|(a, b)| a * a + a * b + b * b).sum();
        total += dt * seg / 3.0;
        prev = next;
    }
    Ok(total)
}

/// Unweighted least-squares line through `(x, y)` points: `(slope, intercept)`.
pub fn least_squares_line(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Mean and standard error of the mean (0 for fewer than two values).
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(times: &[f64], vals: &[f64]) -> Trajectory {
        Trajectory::new("c", times.to_vec(), vals.iter().map(|v| vec![*v]).collect()).unwrap()
    }

    #[test]
    fn err_examples() {
        let t = [0.0, 1.0];
        let truth = vec![vec![0.0], vec![0.0]];
        assert_eq!(err_metric(&t, &truth, &truth).unwrap(), 0.0);
        let pred = vec![vec![0.0], vec![3.0]];
        assert_eq!(err_metric(&t, &pred, &truth).unwrap(), 3.0);
        let t2 = [0.0, 2.0];
        let e2 = err_metric(&t2, &pred, &truth).unwrap();
        assert!((e2 - 3.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!(err_metric(&[0.0], &truth[..1], &truth[..1]).is_err());
        assert!(err_metric(&t, &pred[..1], &truth).is_err());
    }

    #[test]
    fn l2_examples() {
        let a = curve(&[0.0, 2.0], &[1.0, 1.0]);
        let z = curve(&[0.0, 2.0], &[0.0, 0.0]);
        assert!((l2_sq_distance(&a, &z, 0.0, 2.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(l2_sq_distance(&a, &a, 0.0, 2.0).unwrap(), 0.0);
        let n = 1000;
        let t: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let lin = curve(&t, &t);
        let zero = curve(&[0.0, 1.0], &[0.0, 0.0]);
        assert!((l2_sq_distance(&lin, &zero, 0.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-6);
        assert!(l2_sq_distance(&lin, &zero, 0.0, 1.5).is_err());
    }

    #[test]
    fn l2_matches_closed_form_on_offset_nodes() {
        // xhat = t on nodes {0, 1}, xstar = 0 at {0, 0.3, 1}: still int t^2
        let a = curve(&[0.0, 1.0], &[0.0, 1.0]);
        let b = curve(&[0.0, 0.3, 1.0], &[0.0, 0.0, 0.0]);
        assert!((l2_sq_distance(&a, &b, 0.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        // xhat = 1 - t, xstar = t: int (1 - 2t)^2 over [0, 1] = 1/3
        let c = curve(&[0.0, 1.0], &[1.0, 0.0]);
        assert!((l2_sq_distance(&c, &a, 0.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn line_fit() {
        let (s, i) = least_squares_line(&[(1.0, 3.0), (2.0, 5.0), (3.0, 7.0)]).unwrap();
        assert!((s - 2.0).abs() < 1e-12 && (i - 1.0).abs() < 1e-12);
        let (s, _) = least_squares_line(&[(1.0, 1.0), (4.0, -2.0)]).unwrap();
        assert!((s + 1.0).abs() < 1e-12);
        assert!(least_squares_line(&[(1.0, 1.0)]).is_none());
    }

    #[test]
    fn sem_of_single_value_is_zero() {
        assert_eq!(mean_sem(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_sem(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
