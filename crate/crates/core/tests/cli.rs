use std::path::Path;
use std::process::{Command, Output};

use rkhs_ode::cli::RunManifest;
use rkhs_ode::data::{load_dataset, save_dataset, Dataset};
use rkhs_ode::eval::ConvergenceConfig;
use rkhs_ode::ode::VectorField;
use rkhs_ode::solver::{InitKind, SolverConfig};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rkhs-ode"))
        .args(args)
        .env_remove("RKHS_ODE_THREADS")
        .output()
        .expect("spawn rkhs-ode")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(path: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_fhn_topology() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("train.csv");
    let o = bin(&["simulate", "--system", "fhn", "--n-traj", "50", "--n-obs", "201", "--dt", "0.1", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 50 * 201);
    assert_eq!(text.lines().next().unwrap(), "traj_id,t,y1,y2");
    let m = manifest(&dir.path().join("train.manifest.json"));
    assert_eq!(m.outputs, vec![out.display().to_string()]);
    assert_eq!(m.config_hash.len(), 64);
}

#[test]
fn noiseless_simulation_ignores_noise_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (seed, out) in [("1", &a), ("2", &b)] {
        let o = bin(&["simulate", "--system", "fhn", "--n-traj", "3", "--n-obs", "11", "--sigma", "0", "--seed", seed, "--out", p(out)]);
        assert!(o.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn simulate_lorenz96_has_six_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("l96.csv");
    let o = bin(&[
        "simulate", "--system", "lorenz96", "--dim", "6", "--forcing", "8", "--n-traj", "2", "--n-obs", "5", "--dt", "0.01",
        "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(load_dataset(&out).unwrap().dim, 6);
}

#[test]
fn fit_with_zero_iterations_dumps_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    assert!(bin(&["simulate", "--system", "fhn", "--n-traj", "3", "--n-obs", "21", "--sigma", "0.1", "--out", p(&data)])
        .status
        .success());
    let out = dir.path().join("fit");
    let o = bin(&["fit", "--data", p(&data), "--max-iters", "0", "--n-features", "20", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["field.json", "latents.csv", "traces.csv", "config.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let traces = std::fs::read_to_string(out.join("traces.csv")).unwrap();
    assert_eq!(traces.lines().count(), 1);
    let cfg = SolverConfig::from_json_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg.max_iters, 0);
    assert_eq!(cfg.kernel.n_features, Some(20));
}

#[test]
fn missing_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    assert!(bin(&["simulate", "--system", "fhn", "--n-traj", "2", "--n-obs", "5", "--out", p(&data)]).status.success());
    let mut cfg: serde_json::Value = serde_json::from_str(&SolverConfig::default().to_json_string()).unwrap();
    cfg.as_object_mut().unwrap().remove("rho");
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let o = bin(&["fit", "--data", p(&data), "--config", p(&cfg_path), "--out", p(&dir.path().join("f"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rho"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    assert!(bin(&["simulate", "--system", "fhn", "--n-traj", "2", "--n-obs", "11", "--out", p(&data)]).status.success());
    let cfg = SolverConfig {
        lambda: 0.5,
        max_iters: 2,
        ..SolverConfig::default()
    };
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, cfg.to_json_string()).unwrap();
    let out = dir.path().join("f");
    let o = bin(&["fit", "--data", p(&data), "--config", p(&cfg_path), "--max-iters", "1", "--n-features", "10", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let used = SolverConfig::from_json_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(used.lambda, 0.5);
    assert_eq!(used.max_iters, 1);
}

#[test]
fn fit_recovers_self_consistent_data() {
    let dir = tempfile::tempdir().unwrap();
    let c = ConvergenceConfig {
        sigma: 0.0,
        full_m: 80,
        min_m: 80,
        replicates: 1,
        ..ConvergenceConfig::default()
    };
    let truth = c.truth_field().unwrap();
    let (_, clean) = c.ground_truth(&truth).unwrap();
    let data = dir.path().join("d.csv");
    save_dataset(&Dataset::new(vec![clean]).unwrap(), &data).unwrap();
    let cfg = SolverConfig {
        kernel: c.feature_spec(),
        init: InitKind::ZeroField,
        ..c.solver.clone()
    };
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, cfg.to_json_string()).unwrap();
    let out = dir.path().join("fit");
    let o = bin(&["fit", "--data", p(&data), "--config", p(&cfg_path), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let loss = summary["final"]["data_loss"].as_f64().unwrap();
    assert!(loss <= 1e-4, "data loss {loss}");
}

#[test]
fn predict_zero_field_and_zero_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("zero.json");
    std::fs::write(&field, serde_json::to_string(&VectorField::zero(2)).unwrap()).unwrap();
    let out = dir.path().join("pred.csv");
    let o = bin(&["predict", "--field", p(&field), "--x0", "1.5,-2", "--horizon", "1", "--h", "0.25", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ds = load_dataset(&out).unwrap();
    assert_eq!(ds.trajectories[0].len(), 5);
    assert!(ds.trajectories[0].values.iter().all(|v| v == &vec![1.5, -2.0]));
    assert!(dir.path().join("pred.manifest.json").exists());

    let o = bin(&["predict", "--field", p(&field), "--x0", "0,0", "--horizon", "0", "--h", "0.1", "--out", p(&out)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 2);
}

#[test]
fn learned_field_predicts_finite_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    assert!(bin(&["simulate", "--system", "fhn", "--n-traj", "5", "--n-obs", "41", "--sigma", "0.1", "--out", p(&data)])
        .status
        .success());
    let out = dir.path().join("fit");
    assert!(bin(&["fit", "--data", p(&data), "--max-iters", "10", "--n-features", "40", "--out", p(&out)])
        .status
        .success());
    let pred = dir.path().join("pred.csv");
    let o = bin(&[
        "predict", "--field", p(&out.join("field.json")), "--x0", "0.5,-1", "--horizon", "4", "--h", "0.1", "--out", p(&pred),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let tr = &load_dataset(&pred).unwrap().trajectories[0];
    assert_eq!(tr.len(), 41);
    assert!(tr.values.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn benchmark_and_convergence_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let o = bin(&[
        "benchmark", "--protocol", "fhn", "--sigmas", "0.1,0.5", "--replicates", "1", "--n-train", "3", "--n-test", "2",
        "--n-obs", "21", "--max-iters", "3", "--n-features", "20", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "system,sigma,replicate,err_mean,err_sem,runtime_s");
    assert_eq!(lines.count(), 2);
    assert!(out.join("report.json").exists() && out.join("manifest.json").exists());

    let out = dir.path().join("conv");
    let o = bin(&[
        "convergence", "--n-features", "20", "--replicates", "1", "--full-m", "20", "--min-m", "10", "--h", "0.05",
        "--max-iters", "5", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    assert!(bin(&["simulate", "--system", "fhn", "--n-traj", "4", "--n-obs", "21", "--sigma", "0.2", "--seed", "9", "--out", p(&data)])
        .status
        .success());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = bin(&["--threads", "1", "fit", "--data", p(&data), "--max-iters", "5", "--n-features", "20", "--out", p(&out)]);
        assert!(o.status.success());
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["latents.csv", "traces.csv", "field.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // usage error
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bin(&["simulate", "--system", "pendulum", "--out", "x.csv"]).status.code(), Some(2));
    // I/O error
    let missing = dir.path().join("nope.csv");
    assert_eq!(bin(&["fit", "--data", p(&missing), "--out", p(&dir.path().join("f"))]).status.code(), Some(4));
    // numerical divergence
    let field = dir.path().join("lorenz.json");
    std::fs::write(&field, r#"{"form":"analytic","system":{"name":"lorenz63"}}"#).unwrap();
    let o = bin(&[
        "predict", "--field", p(&field), "--x0", "1e200,1e200,1e200", "--horizon", "1", "--h", "0.1", "--out",
        p(&dir.path().join("p.csv")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    // help is not an error
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
}
