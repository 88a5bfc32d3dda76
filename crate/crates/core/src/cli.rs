//! Command-line front end: `simulate | fit | predict | benchmark | convergence`.
//!
//! Every command writes a `manifest.json` describing the run next to its
//! outputs. Exit codes: 0 success, 2 usage or configuration error,
//! 3 numerical failure, 4 I/O error.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{add_noise, load_dataset, save_dataset, write_trajectories, Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::eval::{convergence_experiment, noise_sweep, write_sweep_csv, ConvergenceConfig, Protocol};
use crate::kernels::KernelSpec;
use crate::ode::{simulate_dataset, AnalyticSystem, VectorField};
use crate::rng::{rng_for, Stream};
use crate::solver::{grid_search, penalty_fit_with, predict, FitOptions, SolverConfig};

#[derive(Debug, Parser)]
#[command(name = "rkhs-ode", version, about = "Learn ODE vector fields in an RKHS from noisy trajectories")]
pub struct Cli {
    /// Worker threads; 1 is the deterministic reference mode.
    #[arg(long, global = true, env = "RKHS_ODE_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a reference system and write a dataset CSV.
    Simulate(SimulateArgs),
    /// Fit a vector field to a dataset.
    Fit(FitArgs),
    /// Integrate a saved field from an initial condition.
    Predict(PredictArgs),
    /// Run a noise-sweep benchmark protocol.
    Benchmark(BenchmarkArgs),
    /// Run the convergence-rate experiment.
    Convergence(ConvergenceArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// fhn | lorenz63 | lorenz96 | harmonic
    #[arg(long)]
    pub system: String,
    #[arg(long, default_value_t = 50)]
    pub n_traj: usize,
    #[arg(long, default_value_t = 201)]
    pub n_obs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    /// Fine Euler steps per observation interval.
    #[arg(long, default_value_t = 100)]
    pub substeps: usize,
    /// Lorenz96 dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Lorenz96 forcing F.
    #[arg(long)]
    pub forcing: Option<f64>,
    /// Lower corner of the initial-condition box (comma separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub ic_low: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub ic_high: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the initial-condition draw.
    #[arg(long, default_value_t = 0)]
    pub ic_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Solver settings settable from the command line; they override the
/// config file, which overrides the built-in defaults.
#[derive(Debug, Args, Default)]
pub struct SolverOverrides {
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma0: Option<f64>,
    #[arg(long)]
    pub gamma_max: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub early_stop_eps: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// gradient_matching | zero_field
    #[arg(long)]
    pub init: Option<String>,
    /// Number of random features of a gaussian feature kernel.
    #[arg(long)]
    pub n_features: Option<usize>,
    /// Kernel spec as inline JSON.
    #[arg(long)]
    pub kernel: Option<String>,
}

impl SolverOverrides {
    fn apply(&self, cfg: &mut SolverConfig) -> Result<()> {
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = self.$f { cfg.$f = v; } )*};
        }
        set!(h, rho, lambda, gamma0, gamma_max, max_iters, early_stop_eps, seed);
        if let Some(init) = &self.init {
            cfg.init = serde_json::from_value(serde_json::Value::String(init.clone()))
                .map_err(|_| Error::Usage(format!("unknown init `{init}`")))?;
        }
        if let Some(k) = &self.kernel {
            cfg.kernel = serde_json::from_str::<KernelSpec>(k)?;
        }
        if let Some(n) = self.n_features {
            cfg.kernel.n_features = Some(n);
        }
        cfg.validate()
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Complete solver config (JSON); every key is required.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverOverrides,
    /// Choose (lambda, rho) by grid search on this validation fraction first.
    #[arg(long)]
    pub validate: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1e-5,1e-4,1e-3,1e-2")]
    pub lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5")]
    pub rhos: Vec<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Field JSON written by `fit`.
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    #[arg(long)]
    pub horizon: f64,
    #[arg(long)]
    pub h: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// fhn | lorenz63 | lorenz96
    #[arg(long)]
    pub protocol: String,
    /// Complete solver config replacing the protocol's.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverOverrides,
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub n_obs: Option<usize>,
    /// Measure Err only this long after the first observation.
    #[arg(long)]
    pub err_horizon: Option<f64>,
    /// Root seed for initial conditions and noise.
    #[arg(long)]
    pub protocol_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[arg(long)]
    pub n_features: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub full_m: Option<usize>,
    #[arg(long)]
    pub min_m: Option<usize>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Record of one CLI invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the effective configuration JSON.
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_unix_s: u64,
    pub wall_clock_s: f64,
    pub version: String,
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

struct Run {
    argv: Vec<String>,
    started: Instant,
    started_unix_s: u64,
}

impl Run {
    fn finish(
        &self,
        manifest_path: &Path,
        config_json: &str,
        seed: u64,
        inputs: &[&Path],
        outputs: &[PathBuf],
    ) -> Result<()> {
        let m = RunManifest {
            command: self.argv.join(" "),
            config_hash: sha256_hex(config_json),
            seed,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            started_unix_s: self.started_unix_s,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        write_text(manifest_path, &serde_json::to_string_pretty(&m)?)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// `out.csv` -> `out.manifest.json`.
fn sidecar_manifest(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn default_box(system: &AnalyticSystem) -> (Vec<f64>, Vec<f64>) {
    match system {
        AnalyticSystem::Fhn => (vec![-2.0; 2], vec![2.0; 2]),
        AnalyticSystem::Lorenz63 => (vec![-10.0, -10.0, 10.0], vec![10.0, 10.0, 30.0]),
        s => (vec![-5.0; s.dim()], vec![5.0; s.dim()]),
    }
}

fn cmd_simulate(run: &Run, a: &SimulateArgs) -> Result<()> {
    let mut system = AnalyticSystem::by_name(&a.system)?;
    if let AnalyticSystem::Lorenz96 { dim, forcing } = &mut system {
        *dim = a.dim.unwrap_or(*dim);
        *forcing = a.forcing.unwrap_or(*forcing);
    } else if a.dim.is_some() || a.forcing.is_some() {
        return Err(Error::Usage("--dim and --forcing only apply to lorenz96".into()));
    }
    let (lo, hi) = default_box(&system);
    let lo = a.ic_low.clone().unwrap_or(lo);
    let hi = a.ic_high.clone().unwrap_or(hi);
    if lo.len() != system.dim() || hi.len() != system.dim() {
        return Err(Error::Usage(format!(
            "initial-condition box must have {} coordinates",
            system.dim()
        )));
    }
    use rand::Rng;
    let mut rng = rng_for(a.ic_seed, Stream::InitialConditions, 0);
    let ics: Vec<Vec<f64>> = (0..a.n_traj)
        .map(|_| {
            lo.iter()
                .zip(&hi)
                .map(|(&l, &h)| if l < h { rng.random_range(l..h) } else { l })
                .collect()
        })
        .collect();
    let clean = simulate_dataset(&system, &ics, a.t0, a.dt, a.n_obs, a.substeps)?;
    let data = add_noise(&clean, a.sigma, crate::rng::derive_seed(a.seed, Stream::Noise, 0))?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_dataset(&data, &a.out)?;
    let config = serde_json::json!({
        "system": system,
        "n_traj": a.n_traj,
        "n_obs": a.n_obs,
        "dt": a.dt,
        "t0": a.t0,
        "substeps": a.substeps,
        "ic_low": lo,
        "ic_high": hi,
        "sigma": a.sigma,
        "ic_seed": a.ic_seed,
    });
    run.finish(&sidecar_manifest(&a.out), &config.to_string(), a.seed, &[], &[a.out.clone()])
}

/// Config file (complete) or defaults, then command-line overrides.
fn resolve_config(file: Option<&Path>, base: SolverConfig, overrides: &SolverOverrides) -> Result<SolverConfig> {
    let mut cfg = match file {
        Some(p) => SolverConfig::from_json_str(&std::fs::read_to_string(p)?)?,
        None => base,
    };
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

fn cmd_fit(run: &Run, a: &FitArgs, opts: FitOptions) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let mut cfg = resolve_config(a.config.as_deref(), SolverConfig::default(), &a.solver)?;
    create_dir(&a.out)?;
    let mut outputs = Vec::new();
    if let Some(frac) = a.validate {
        let report = grid_search(&data, &cfg, frac, &a.lambdas, &a.rhos, opts)?;
        cfg = report.best.clone();
        let p = a.out.join("validation.json");
        write_text(&p, &serde_json::to_string_pretty(&report)?)?;
        outputs.push(p);
    }
    let config_json = cfg.to_json_string();
    let cfg_path = a.out.join("config.json");
    write_text(&cfg_path, &config_json)?;
    outputs.push(cfg_path);
    let fit = match penalty_fit_with(&data, &cfg, opts) {
        Ok(fit) => fit,
        Err(e) => {
            if let Error::FitDiverged { traces, .. } = &e {
                let p = a.out.join("traces.csv");
                crate::solver::write_traces(traces, std::fs::File::create(&p)?)?;
            }
            return Err(e);
        }
    };
    let field_path = a.out.join("field.json");
    write_text(&field_path, &serde_json::to_string(&fit.field)?)?;
    let latents_path = a.out.join("latents.csv");
    write_trajectories(
        &fit.latent_trajectories(),
        data.dim,
        std::io::BufWriter::new(std::fs::File::create(&latents_path)?),
    )?;
    let traces_path = a.out.join("traces.csv");
    fit.write_traces(std::fs::File::create(&traces_path)?)?;
    let summary_path = a.out.join("summary.json");
    write_text(
        &summary_path,
        &serde_json::to_string_pretty(&serde_json::json!({
            "iterations_run": fit.iterations_run,
            "stop_reason": fit.stop_reason,
            "final": fit.traces.last(),
        }))?,
    )?;
    outputs.extend([field_path, latents_path, traces_path, summary_path]);
    run.finish(&a.out.join("manifest.json"), &config_json, cfg.seed, &[&a.data], &outputs)
}

fn cmd_predict(run: &Run, a: &PredictArgs) -> Result<()> {
    let field: VectorField = serde_json::from_str(&std::fs::read_to_string(&a.field)?)?;
    field.validate()?;
    let (times, states) = predict(&field, &a.x0, a.t0, a.horizon, a.h)?;
    let traj = Trajectory::new("0", times, states)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_trajectories(&[traj], field.dim(), std::fs::File::create(&a.out)?)?;
    let config = serde_json::json!({"x0": a.x0, "t0": a.t0, "horizon": a.horizon, "h": a.h});
    run.finish(&sidecar_manifest(&a.out), &config.to_string(), 0, &[&a.field], &[a.out.clone()])
}

fn cmd_benchmark(run: &Run, a: &BenchmarkArgs, opts: FitOptions) -> Result<()> {
    let mut p = Protocol::by_name(&a.protocol)?;
    p.solver = resolve_config(a.config.as_deref(), p.solver.clone(), &a.solver)?;
    if let Some(s) = &a.sigmas {
        p.sigmas = s.clone();
    }
    macro_rules! set {
        ($($f:ident),*) => {$( if let Some(v) = a.$f { p.$f = v; } )*};
    }
    set!(replicates, n_train, n_test, n_obs);
    if a.err_horizon.is_some() {
        p.err_horizon = a.err_horizon;
    }
    if let Some(s) = a.protocol_seed {
        p.seed = s;
    }
    p.validate()?;
    create_dir(&a.out)?;
    let report = noise_sweep(&p, opts)?;
    let json_path = a.out.join("report.json");
    write_text(&json_path, &serde_json::to_string_pretty(&report)?)?;
    let csv_path = a.out.join("report.csv");
    write_sweep_csv(&report, std::fs::File::create(&csv_path)?)?;
    let config_json = serde_json::to_string(&p)?;
    run.finish(&a.out.join("manifest.json"), &config_json, p.seed, &[], &[json_path, csv_path])
}

fn cmd_convergence(run: &Run, a: &ConvergenceArgs, opts: FitOptions) -> Result<()> {
    let mut c = ConvergenceConfig::default();
    macro_rules! set {
        ($($f:ident),*) => {$( if let Some(v) = a.$f { c.$f = v; } )*};
    }
    set!(n_features, replicates, sigma, full_m, min_m, seed);
    if let Some(h) = a.h {
        c.solver.h = h;
    }
    if let Some(l) = a.lambda {
        c.solver.lambda = l;
    }
    if let Some(r) = a.rho {
        c.solver.rho = r;
    }
    if let Some(m) = a.max_iters {
        c.solver.max_iters = m;
    }
    c.validate()?;
    create_dir(&a.out)?;
    let report = convergence_experiment(&c, opts)?;
    let json_path = a.out.join("report.json");
    write_text(&json_path, &serde_json::to_string_pretty(&report)?)?;
    let csv_path = a.out.join("report.csv");
    report.write_csv(std::fs::File::create(&csv_path)?)?;
    let config_json = serde_json::to_string(&c)?;
    run.finish(&a.out.join("manifest.json"), &config_json, c.seed, &[], &[json_path, csv_path])
}

pub fn execute(cli: &Cli, argv: Vec<String>) -> Result<()> {
    let run = Run {
        argv,
        started: Instant::now(),
        started_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    let opts = FitOptions {
        threads: cli.threads.unwrap_or(1).max(1),
    };
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(&run, a),
        Command::Fit(a) => cmd_fit(&run, a, opts),
        Command::Predict(a) => cmd_predict(&run, a),
        Command::Benchmark(a) => cmd_benchmark(&run, a, opts),
        Command::Convergence(a) => cmd_convergence(&run, a, opts),
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Load a dataset, for callers that only have a path.
pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    load_dataset(path)
}
