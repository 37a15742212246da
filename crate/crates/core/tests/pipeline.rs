use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use cellmix::config::{parse_config, RunConfig};
use cellmix::grid::Grid2D;
use cellmix::mixnorm::MixNormContext;
use cellmix::runner::{run_optimize, run_simulate, write_report};
use cellmix::snapshot;
use cellmix::config::preset_theta0;

fn small_config(dir: &Path) -> RunConfig {
    RunConfig {
        n: 17,
        tau: 0.05,
        tf: 1.0,
        max_iter: 4,
        output: dir.to_path_buf(),
        ..RunConfig::default()
    }
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn optimize_writes_the_full_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let report = run_optimize(&cfg, |_| {}).unwrap();
    write_report(&report).unwrap();

    let iterations = read(tmp.path(), "iterations.csv");
    assert!(iterations.starts_with("k,J,mu,lambda,alpha,beta\n"));
    assert_eq!(iterations.lines().count(), 1 + report.iterations.len());

    let controls = read(tmp.path(), "controls.csv");
    assert!(controls.starts_with("time,u1,u2\n"));
    assert_eq!(controls.lines().count(), 1 + 20);

    let mixnorm = read(tmp.path(), "mixnorm.csv");
    assert!(mixnorm.starts_with("step,time,mixnorm_sq,mixnorm,cost_cumulative\n"));
    assert_eq!(mixnorm.lines().count(), 1 + 21);

    for t in ["0.0000", "0.2000", "0.4000", "0.6000", "0.8000", "1.0000"] {
        let path = tmp.path().join("snapshots").join(format!("t_{t}.csv"));
        let snap = snapshot::read(&path).unwrap();
        assert_eq!(snap.field.grid().n(), 17);
    }

    let manifest: serde_json::Value = serde_json::from_str(&read(tmp.path(), "manifest.json")).unwrap();
    assert_eq!(manifest["subcommand"], "optimize");
    assert_eq!(manifest["config"]["r"], 0.3);
    assert_eq!(manifest["result"]["iterations"], report.iterations.len());
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert!(manifest["version"].is_string());
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let report = run_optimize(&small_config(dir), |_| {}).unwrap();
        write_report(&report).unwrap();
    }
    for name in ["iterations.csv", "controls.csv", "mixnorm.csv", "snapshots/t_1.0000.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs");
    }
}

#[test]
fn simulate_replays_optimized_controls() {
    let tmp = tempfile::tempdir().unwrap();
    let opt_dir = tmp.path().join("opt");
    let report = run_optimize(&small_config(&opt_dir), |_| {}).unwrap();
    write_report(&report).unwrap();

    let sim_cfg = RunConfig {
        controls: Some(opt_dir.join("controls.csv")),
        output: tmp.path().join("sim"),
        ..small_config(&opt_dir)
    };
    let replay = run_simulate(&sim_cfg).unwrap();
    for (a, b) in replay
        .record
        .mixnorm_series
        .iter()
        .zip(&report.record.mixnorm_series)
    {
        assert!((a - b).abs() <= 1e-12);
    }
    assert_eq!(replay.controls, report.controls);
    write_report(&replay).unwrap();
    assert_eq!(
        read(&sim_cfg.output, "mixnorm.csv"),
        read(&opt_dir, "mixnorm.csv")
    );
}

/// A value different from the default for every configuration key.
fn perturb(key: &str) -> String {
    match key {
        "n" => "9".into(),
        "tau" => "0.1".into(),
        "tf" => "0.5".into(),
        "indices" => "[1, 3]".into(),
        "scaled" => "true".into(),
        "r" => "0.31".into(),
        "lambda0" => "2.0".into(),
        "eps1" => "1e-4".into(),
        "eps2" => "2e-3".into(),
        "alpha0" => "0.7".into(),
        "max_iter" => "3".into(),
        "theta0" => "\"sine-stripe\"".into(),
        "initial_controls" => "[0.5, 0.5]".into(),
        "controls" => "\"elsewhere.csv\"".into(),
        "output" => "\"elsewhere\"".into(),
        "snapshot_times" => "[0.0, 0.5]".into(),
        "adjoint_scheme" => "\"explicit\"".into(),
        "spectrum" => "\"five-point\"".into(),
        "solver_rel_tol" => "1e-9".into(),
        "solver_max_iter" => "77".into(),
        other => panic!("no perturbation for key {other}"),
    }
}

#[test]
fn manifest_records_every_configuration_key() {
    let base = RunConfig {
        tau: 0.1,
        tf: 1.0,
        snapshot_times: vec![0.0, 1.0],
        ..RunConfig::default()
    };
    let base_text = toml::to_string(&base).unwrap();
    let table: toml::Table = toml::from_str(&base_text).unwrap();
    let keys: Vec<String> = table
        .keys()
        .cloned()
        .chain(["initial_controls".to_string(), "controls".to_string()])
        .collect();
    assert_eq!(keys.len(), 20, "every field is covered");

    let manifest_config = |cfg: &RunConfig| serde_json::to_value(cfg).unwrap();
    let reference = manifest_config(&base);
    for key in keys {
        let mut overrides = vec![(key.clone(), perturb(&key))];
        if key == "tau" {
            overrides[0].1 = "0.05".into();
        }
        if key == "tf" {
            overrides.push(("snapshot_times".into(), "[0.0]".into()));
        }
        let cfg = parse_config(Path::new("base.toml"), &base_text, &overrides)
            .unwrap_or_else(|e| panic!("{key}: {e}"));
        assert_ne!(manifest_config(&cfg), reference, "{key} is invisible in the manifest");
    }
}

#[test]
fn snapshot_mix_norm_of_cosine_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let g = Grid2D::new(129).unwrap();
    let theta = preset_theta0("cosine-x", g).unwrap();
    let path = tmp.path().join("cos.csv");
    snapshot::write(&path, &theta, 0.0, "theta").unwrap();
    let back = snapshot::read(&path).unwrap();
    let got = MixNormContext::new(g).mix_norm_sq(&back.field).unwrap();
    assert!((got - 1.0 / (2.0 * (1.0 + PI * PI))).abs() < 1e-6);
}
