use std::path::{Path, PathBuf};
use std::process::Command;

use insdvl::io;
use insdvl::pronet::{save_weights, Architecture, Regressor, Variant};
use insdvl_cli::*;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("insdvl-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

fn small_dataset_config() -> Config {
    let mut c = Config::default();
    c.dataset.kinds = vec!["turning-line".into(), "dive-climb".into()];
    c.dataset.duration = 100.0;
    c.dataset.grid_count = 4;
    c
}

#[test]
fn simulate_writes_the_mission_and_is_reproducible() {
    let out = scratch("sim");
    let m = cmd_simulate(&Invocation::new(Config::default(), &out)).unwrap();
    assert_eq!(lines(&out.join("imu.csv")), 33_001);
    assert_eq!(lines(&out.join("trajectory.csv")), 33_001);
    assert_eq!(lines(&out.join("dvl.csv")), 331);
    let again = cmd_simulate(&Invocation::new(Config::default(), out.join("again"))).unwrap();
    assert_eq!(m.artifacts, again.artifacts);
    let loaded = RunManifest::load(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded, m);
    let mut other = Config::default();
    other.seed = 1;
    let third = cmd_simulate(&Invocation::new(other, out.join("other"))).unwrap();
    assert_ne!(third.artifacts["imu.csv"], m.artifacts["imu.csv"]);
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn missing_config_fails_without_outputs() {
    let out = scratch("missing");
    let status = Command::new(env!("CARGO_BIN_EXE_insdvl"))
        .args(["simulate", "--config", "/nonexistent/run.toml", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("cannot read config"));
    assert!(!out.exists());
}

#[test]
fn bad_config_values_are_rejected() {
    let dir = scratch("badcfg");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("run.toml");
    std::fs::write(&path, "[dataset]\ngrid_max = 0.08\n").unwrap();
    let cfg = Config::load(&path).unwrap();
    assert!(cmd_build_dataset(&Invocation::new(cfg, dir.join("out"))).is_err());
    assert!(!dir.join("out/train.csv").exists());
    std::fs::write(&path, "[mission]\ntrajectory = \"spiral\"\n").unwrap();
    assert!(Config::load(&path).is_err());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn dataset_ratio_override_splits_in_half() {
    let out = scratch("ratio");
    let status = Command::new(env!("CARGO_BIN_EXE_insdvl"))
        .args(["build-dataset", "--train-ratio", "0.5", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(lines(&out.join("train.csv")), 36_001);
    assert_eq!(lines(&out.join("test.csv")), 36_001);
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn training_curves_fall_and_resume_restores_the_loss() {
    let root = scratch("train");
    let mut cfg = small_dataset_config();
    cmd_build_dataset(&Invocation::new(cfg.clone(), root.join("ds"))).unwrap();
    cfg.training.dataset = Some(root.join("ds"));
    cfg.training.epochs = 5;
    for variant in ["baseline", "detrend"] {
        cfg.training.variant = variant.into();
        cfg.training.resume = None;
        let out = root.join(variant);
        cmd_train(&Invocation::new(cfg.clone(), &out)).unwrap();
        let curve = io::read_curve(std::fs::File::open(out.join("curve.csv")).unwrap()).unwrap();
        assert_eq!(curve.len(), 6);
        let test: Vec<f64> = curve.iter().map(|r| r.test_loss).collect();
        // Least-squares slope of the test loss over epochs 0..=5.
        let mean_t = 2.5;
        let mean_l = test.iter().sum::<f64>() / 6.0;
        let slope: f64 = test.iter().enumerate().map(|(t, l)| (t as f64 - mean_t) * (l - mean_l)).sum();
        assert!(slope < 0.0 && test[5] < test[0], "{variant}: {test:?}");
        let best = test.iter().cloned().fold(f64::INFINITY, f64::min);

        let weights = out.join(format!("{variant}.weights"));
        insdvl::pronet::load_weights(&weights).unwrap();
        let mut resume = cfg.clone();
        resume.training.resume = Some(weights);
        resume.training.epochs = 0;
        cmd_train(&Invocation::new(resume, root.join(format!("{variant}-resumed")))).unwrap();
        let again = io::read_curve(std::fs::File::open(root.join(format!("{variant}-resumed/curve.csv"))).unwrap()).unwrap();
        assert!((again[0].test_loss - best).abs() < 1e-9);
    }
    let mut wrong = cfg.clone();
    wrong.training.variant = "baseline".into();
    wrong.training.resume = Some(root.join("detrend/detrend.weights"));
    assert!(cmd_train(&Invocation::new(wrong, root.join("wrong"))).is_err());
    let _ = std::fs::remove_dir_all(&root);
}

#[test]
fn benchmark_table_and_traces() {
    let root = scratch("bench");
    std::fs::create_dir_all(&root).unwrap();
    let mut cfg = Config::default();
    for v in [Variant::Baseline, Variant::Detrend] {
        let p = root.join(format!("{v}.weights"));
        save_weights(&Regressor::new(v, Architecture::default(), 5).unwrap(), &p).unwrap();
        cfg.benchmark.weights.push(p);
    }
    cfg.benchmark.mc_runs = 3;
    cfg.benchmark.emit_traces = true;
    let start = std::time::Instant::now();
    let m = cmd_benchmark(&Invocation::new(cfg.clone(), root.join("out"))).unwrap();
    assert!(start.elapsed().as_secs() < 60);
    assert_eq!(lines(&root.join("out/results.csv")), 7);
    assert_eq!(lines(&root.join("out/runs.csv")), 1 + 6 * 3);
    for name in &cfg.benchmark.policies {
        assert_eq!(lines(&root.join(format!("out/traces/{name}.csv"))), 33_001);
    }
    let replayed = replay(&m, &root.join("replay")).unwrap();
    assert_eq!(replayed.artifacts, m.artifacts);

    cfg.benchmark.weights.clear();
    assert!(cmd_benchmark(&Invocation::new(cfg, root.join("no-weights"))).is_err());
    let _ = std::fs::remove_dir_all(&root);
}
