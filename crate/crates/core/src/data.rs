//! Trajectories, datasets, Euler grids and CSV I/O.
//!
//! CSV schema (header required): `traj_id,t,y1,...,yd`, rows in any order.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};

/// One observed time series: strictly ascending times and finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let t = Self {
            id: id.into(),
            times,
            values,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::InsufficientData(format!(
                "trajectory `{}` has no observations",
                self.id
            )));
        }
        if self.times.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.times.len(),
                got: self.values.len(),
            });
        }
        let d = self.values[0].len();
        if d == 0 {
            return Err(Error::Config("observations must have dimension >= 1".into()));
        }
        for (j, (t, y)) in self.times.iter().zip(&self.values).enumerate() {
            if y.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: y.len(),
                });
            }
            if !t.is_finite() || y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!(
                    "trajectory `{}` observation {j} is not finite",
                    self.id
                )));
            }
            if j > 0 && !(self.times[j] > self.times[j - 1]) {
                return Err(Error::Config(format!(
                    "trajectory `{}` times are not strictly ascending at observation {j}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn first_time(&self) -> f64 {
        self.times[0]
    }

    pub fn last_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Keep every `step`-th observation starting with the first.
    pub fn subsample(&self, step: usize) -> Trajectory {
        let step = step.max(1);
        Trajectory {
            id: self.id.clone(),
            times: self.times.iter().step_by(step).copied().collect(),
            values: self.values.iter().step_by(step).cloned().collect(),
        }
    }

    /// Observations with `t <= t_max`.
    pub fn truncate(&self, t_max: f64) -> Trajectory {
        let n = self.times.iter().take_while(|&&t| t <= t_max).count();
        Trajectory {
            id: self.id.clone(),
            times: self.times[..n].to_vec(),
            values: self.values[..n].to_vec(),
        }
    }
}

/// A collection of trajectories of one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub dim: usize,
    /// Observation horizon `T`; defaults to the largest observed time.
    pub horizon: f64,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::InsufficientData("dataset has no trajectories".into()))?;
        let dim = first.dim();
        for t in &trajectories {
            t.validate()?;
            if t.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: t.dim(),
                });
            }
        }
        let horizon = trajectories
            .iter()
            .map(Trajectory::last_time)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            trajectories,
            dim,
            horizon,
        })
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        let last = self
            .trajectories
            .iter()
            .map(Trajectory::last_time)
            .fold(f64::NEG_INFINITY, f64::max);
        if !(horizon >= last) {
            return Err(Error::Config(format!(
                "horizon {horizon} is before the last observation {last}"
            )));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn n_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn n_observations(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// All observed values, trajectory by trajectory.
    pub fn points(&self) -> Vec<Vec<f64>> {
        self.trajectories
            .iter()
            .flat_map(|t| t.values.iter().cloned())
            .collect()
    }

    /// Observed values with their time appended as a last coordinate.
    pub fn points_with_time(&self) -> Vec<Vec<f64>> {
        self.trajectories
            .iter()
            .flat_map(|tr| {
                tr.times.iter().zip(&tr.values).map(|(t, y)| {
                    let mut p = y.clone();
                    p.push(*t);
                    p
                })
            })
            .collect()
    }

    /// Smallest positive gap between consecutive observations.
    pub fn min_gap(&self) -> Option<f64> {
        self.trajectories
            .iter()
            .flat_map(|t| t.times.windows(2).map(|w| w[1] - w[0]))
            .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.min(g))))
    }

    pub fn map_trajectories(&self, f: impl Fn(&Trajectory) -> Trajectory) -> Result<Dataset> {
        let ds = Dataset::new(self.trajectories.iter().map(f).collect())?;
        Ok(Dataset {
            horizon: self.horizon.max(ds.horizon),
            ..ds
        })
    }

    /// Split the trajectories into `(train, validation)`, moving a seeded
    /// random `fraction` of them (at least one) into validation.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction must be in (0, 1), got {fraction}"
            )));
        }
        let n = self.n_trajectories();
        if n < 2 {
            return Err(Error::InsufficientData(
                "a validation split needs at least two trajectories".into(),
            ));
        }
        let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
        let mut rng = rng_for(seed, Stream::Split, 0);
        let mut idx: Vec<usize> = (0..n).collect();
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let val: HashSet<usize> = idx[..n_val].iter().copied().collect();
        let pick = |keep: bool| -> Vec<Trajectory> {
            (0..n)
                .filter(|i| val.contains(i) != keep)
                .map(|i| self.trajectories[i].clone())
                .collect()
        };
        Ok((Dataset::new(pick(true))?, Dataset::new(pick(false))?))
    }
}

/// Parse a dataset from CSV text.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "traj_id" || &header[1] != "t" {
        return Err(Error::Parse {
            line: 1,
            msg: "header must be `traj_id,t,y1,...,yd`".into(),
        });
    }
    for (i, name) in header.iter().skip(2).enumerate() {
        if name != format!("y{}", i + 1) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected column `y{}`, found `{name}`", i + 1),
            });
        }
    }
    let d = header.len() - 2;

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(f64, Vec<f64>, usize)>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != d + 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", d + 2, rec.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("cannot parse {what} `{s}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite {what} `{s}`"),
                });
            }
            Ok(v)
        };
        let id = rec[0].to_string();
        let t = parse(&rec[1], "time")?;
        let y = (0..d)
            .map(|i| parse(&rec[i + 2], &format!("y{}", i + 1)))
            .collect::<Result<Vec<f64>>>()?;
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push((t, y, line));
    }
    if order.is_empty() {
        return Err(Error::InsufficientData("dataset file has no rows".into()));
    }
    let mut trajectories = Vec::with_capacity(order.len());
    for id in order {
        let mut obs = rows.remove(&id).expect("id recorded on first sight");
        obs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        for w in obs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Parse {
                    line: w[1].2.max(w[0].2),
                    msg: format!("duplicate time {} for trajectory `{id}`", w[0].0),
                });
            }
        }
        let (times, values) = obs.into_iter().map(|(t, y, _)| (t, y)).unzip();
        trajectories.push(Trajectory::new(id, times, values)?);
    }
    Dataset::new(trajectories)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?)
}

/// Write a dataset as CSV. Numbers use the shortest representation that
/// round-trips exactly.
pub fn write_dataset<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    write_trajectories(&dataset.trajectories, dataset.dim, writer)
}

pub fn write_trajectories<W: Write>(trajectories: &[Trajectory], dim: usize, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["traj_id".to_string(), "t".to_string()];
    header.extend((1..=dim).map(|i| format!("y{i}")));
    w.write_record(&header)?;
    for tr in trajectories {
        for (t, y) in tr.times.iter().zip(&tr.values) {
            let mut rec = vec![tr.id.clone(), t.to_string()];
            rec.extend(y.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    write_dataset(dataset, std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Regular grid `s_l = t_start + l h`, `l = 0..=k`, for one trajectory,
/// with the node index of every observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub h: f64,
    pub k: usize,
    pub obs_index: Vec<usize>,
}

/// Nearest node index for offset `x = (t - t_start) / h`, ties to the lower node.
fn nearest_node(x: f64) -> usize {
    (x - 0.5 - 1e-12).ceil().max(0.0) as usize
}

impl TimeGrid {
    /// Grid spanning the trajectory's first to last observation.
    pub fn for_trajectory(traj: &Trajectory, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("grid step h must be positive, got {h}")));
        }
        let t_start = traj.first_time();
        let obs_index: Vec<usize> = traj
            .times
            .iter()
            .map(|t| nearest_node((t - t_start) / h))
            .collect();
        let k = *obs_index.last().expect("trajectory is non-empty");
        Ok(Self {
            t_start,
            h,
            k,
            obs_index,
        })
    }

    pub fn node(&self, l: usize) -> f64 {
        self.t_start + l as f64 * self.h
    }

    pub fn n_nodes(&self) -> usize {
        self.k + 1
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.k).map(|l| self.node(l)).collect()
    }
}

/// One grid per trajectory with a shared step `h`.
pub fn build_grid(dataset: &Dataset, h: f64) -> Result<Vec<TimeGrid>> {
    if let Some(gap) = dataset.min_gap() {
        if h > gap * (1.0 + 1e-9) {
            log::warn!("grid step {h} exceeds the smallest observation gap {gap}; observations will share nodes");
        }
    }
    dataset
        .trajectories
        .iter()
        .map(|t| TimeGrid::for_trajectory(t, h))
        .collect()
}

/// Irregular-sampling weights `w_j = t_{j+1} - t_j` with `t_{m+1} = T`; the
/// last weight is `max(T - t_m, h)` so that every observation counts.
pub fn sample_weights(traj: &Trajectory, horizon: f64, h: f64) -> Result<Vec<f64>> {
    let last = traj.last_time();
    if horizon < last {
        return Err(Error::Config(format!(
            "horizon {horizon} is before the last observation {last}"
        )));
    }
    let mut w: Vec<f64> = traj.times.windows(2).map(|p| p[1] - p[0]).collect();
    w.push((horizon - last).max(h));
    Ok(w)
}

/// Add i.i.d. `N(0, sigma^2)` noise to every coordinate of every observation.
pub fn add_noise(dataset: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(dataset.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = dataset.clone();
    for (i, tr) in out.trajectories.iter_mut().enumerate() {
        let mut rng = rng_for(seed, Stream::Noise, i as u64);
        for y in &mut tr.values {
            for v in y.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(times: &[f64]) -> Trajectory {
        Trajectory::new("a", times.to_vec(), times.iter().map(|t| vec![*t]).collect()).unwrap()
    }

    #[test]
    fn load_simple_file() {
        let text = "traj_id,t,y1,y2\nA,0,1,2\nA,0.1,1.5,2.5\nA,0.2,2,3\n";
        let ds = read_dataset(text.as_bytes()).unwrap();
        assert_eq!(ds.n_trajectories(), 1);
        assert_eq!(ds.trajectories[0].len(), 3);
        assert_eq!(ds.dim, 2);
        assert_eq!(ds.horizon, 0.2);
    }

    #[test]
    fn interleaved_ids_are_grouped_and_sorted() {
        let text = "traj_id,t,y1\nb,1,0\na,0.5,1\nb,0,2\na,0,3\n";
        let ds = read_dataset(text.as_bytes()).unwrap();
        assert_eq!(ds.n_trajectories(), 2);
        assert_eq!(ds.trajectories[0].id, "b");
        assert_eq!(ds.trajectories[0].times, vec![0.0, 1.0]);
        assert_eq!(ds.trajectories[0].values, vec![vec![2.0], vec![0.0]]);
        assert_eq!(ds.trajectories[1].times, vec![0.0, 0.5]);
    }

    #[test]
    fn nan_row_is_a_parse_error_with_line() {
        let text = "traj_id,t,y1\na,0,1\na,1,NaN\n";
        match read_dataset(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(matches!(
            read_dataset("traj_id,t,y1\na,0,1,2\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            read_dataset("traj_id,t,y1\na,0,x\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            read_dataset("traj_id,t,y1\na,0,1\na,0,2\n".as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(read_dataset("id,t,y1\na,0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn grid_examples() {
        let g = TimeGrid::for_trajectory(&traj(&[0.0, 0.1, 0.2]), 0.1).unwrap();
        assert_eq!(g.k, 2);
        assert_eq!(g.obs_index, vec![0, 1, 2]);
        let g = TimeGrid::for_trajectory(&traj(&[0.0, 0.14]), 0.1).unwrap();
        assert_eq!(g.obs_index, vec![0, 1]);
        assert!((g.node(1) - 0.14).abs() <= 0.05);
        let g = TimeGrid::for_trajectory(&traj(&[3.0]), 0.1).unwrap();
        assert_eq!(g.k, 0);
        assert_eq!(g.nodes(), vec![3.0]);
        assert!(TimeGrid::for_trajectory(&traj(&[0.0]), 0.0).is_err());
    }

    #[test]
    fn ties_round_down() {
        let g = TimeGrid::for_trajectory(&traj(&[0.0, 0.5, 1.5]), 1.0).unwrap();
        assert_eq!(g.obs_index, vec![0, 0, 1]);
    }

    #[test]
    fn weights_examples() {
        assert_eq!(sample_weights(&traj(&[0.0, 1.0, 2.0]), 3.0, 0.1).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(sample_weights(&traj(&[0.0, 0.5, 2.0]), 2.0, 0.1).unwrap(), vec![0.5, 1.5, 0.1]);
        assert_eq!(sample_weights(&traj(&[0.0]), 1.0, 0.1).unwrap(), vec![1.0]);
        assert!(sample_weights(&traj(&[0.0, 2.0]), 1.0, 0.1).is_err());
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let n = 100_000;
        let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let ds = Dataset::new(vec![Trajectory::new("a", t, vec![vec![0.0]; n]).unwrap()]).unwrap();
        let same = add_noise(&ds, 0.0, 1).unwrap();
        assert_eq!(same, ds);
        let noisy = add_noise(&ds, 0.12, 5).unwrap();
        let vals: Vec<f64> = noisy.trajectories[0].values.iter().map(|v| v[0]).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((sd - 0.12).abs() < 0.02 * 0.12, "{sd}");
        assert_eq!(noisy, add_noise(&ds, 0.12, 5).unwrap());
    }

    #[test]
    fn split_is_seeded_partition() {
        let trajs: Vec<Trajectory> = (0..10)
            .map(|i| Trajectory::new(i.to_string(), vec![0.0], vec![vec![i as f64]]).unwrap())
            .collect();
        let ds = Dataset::new(trajs).unwrap();
        let (a, b) = ds.split(0.2, 3).unwrap();
        assert_eq!(a.n_trajectories(), 8);
        assert_eq!(b.n_trajectories(), 2);
        assert_eq!(ds.split(0.2, 3).unwrap(), (a, b));
    }
}
