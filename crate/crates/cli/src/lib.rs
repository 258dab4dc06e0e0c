//! Pipeline commands behind the `insdvl` binary. Each command reads only its
//! config and declared input files, writes into a staging directory, and moves
//! the results into the output directory together with a manifest once
//! everything has succeeded.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use insdvl::bench::{paired_bootstrap, run_campaign, run_data, Interval, Mission};
use insdvl::io;
use insdvl::pronet::{build_dataset, evaluate_by_level, load_weights, train, write_weights, Regressor, TrainingExample};

pub mod config;
pub mod manifest;

pub use config::Config;
pub use manifest::{sha256_file, RunManifest, MANIFEST_FILE};

/// Where a command's configuration came from and where it writes.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub config: Config,
    pub config_path: Option<PathBuf>,
    pub out: PathBuf,
}

impl Invocation {
    pub fn new(config: Config, out: impl Into<PathBuf>) -> Self {
        Self { config, config_path: None, out: out.into() }
    }
}

/// Output files are written here first and renamed into place on success.
struct Staging {
    out: PathBuf,
    dir: PathBuf,
    files: Vec<String>,
    inputs: BTreeMap<String, String>,
}

impl Staging {
    fn new(out: &Path, command: &str) -> Result<Self> {
        let dir = out.join(format!(".partial-{command}"));
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Self { out: out.to_path_buf(), dir, files: Vec::new(), inputs: BTreeMap::new() })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> insdvl::Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w).with_context(|| format!("writing {name}"))?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn commit(mut self, command: &str, inv: &Invocation) -> Result<RunManifest> {
        let mut artifacts = BTreeMap::new();
        for name in &self.files {
            let dest = self.out.join(name);
            if let Some(parent) = dest.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::rename(self.dir.join(name), &dest)?;
            artifacts.insert(name.clone(), sha256_file(&dest)?);
        }
        let manifest = RunManifest {
            command: command.to_string(),
            config_path: inv.config_path.clone(),
            seed: inv.config.seed,
            out_dir: self.out.clone(),
            inputs: std::mem::take(&mut self.inputs),
            artifacts,
            config: inv.config.clone(),
        };
        manifest.save(&self.out)?;
        Ok(manifest)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.dir);
    }
}

/// Writes the mission truth, perfect and noisy IMU streams, and DVL fixes of run 0.
pub fn cmd_simulate(inv: &Invocation) -> Result<RunManifest> {
    inv.config.validate()?;
    let scenario = inv.config.scenario()?;
    let mission = Mission::new(&scenario)?;
    let data = run_data(&scenario, &mission, 0)?;
    let mut st = Staging::new(&inv.out, "simulate")?;
    st.write("trajectory.csv", |w| io::write_trajectory(w, &mission.truth))?;
    st.write("imu_perfect.csv", |w| io::write_imu(w, &mission.perfect_imu))?;
    st.write("imu.csv", |w| io::write_imu(w, &data.imu))?;
    st.write("dvl.csv", |w| io::write_dvl(w, &data.dvl))?;
    st.commit("simulate", inv)
}

pub fn cmd_build_dataset(inv: &Invocation) -> Result<RunManifest> {
    inv.config.validate()?;
    let ds = build_dataset(&inv.config.dataset_config()?)?;
    eprintln!("dataset: {} train, {} test", ds.train.len(), ds.test.len());
    let mut st = Staging::new(&inv.out, "build-dataset")?;
    st.write("train.csv", |w| io::write_examples(w, &ds.train))?;
    st.write("test.csv", |w| io::write_examples(w, &ds.test))?;
    st.commit("build-dataset", inv)
}

fn read_split(st: &mut Staging, dir: &Path, name: &str) -> Result<Vec<TrainingExample>> {
    let path = dir.join(name);
    st.input(&path)?;
    let f = File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
    io::read_examples(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn dataset_dir(cfg: &Config) -> Result<&Path> {
    cfg.training.dataset.as_deref().context("no dataset directory (set training.dataset or pass --dataset)")
}

/// Trains `training.variant` on the dataset directory and writes the best
/// weights, the loss curve and the per-level test summary.
pub fn cmd_train(inv: &Invocation) -> Result<RunManifest> {
    let cfg = &inv.config;
    cfg.validate()?;
    let variant = cfg.variant()?;
    let train_cfg = cfg.train_config()?;
    let mut st = Staging::new(&inv.out, "train")?;
    let dir = dataset_dir(cfg)?;
    let train_set = read_split(&mut st, dir, "train.csv")?;
    let test_set = read_split(&mut st, dir, "test.csv")?;
    let model = match &cfg.training.resume {
        Some(path) => {
            st.input(path)?;
            let m = load_weights(path).with_context(|| format!("loading {}", path.display()))?;
            if m.variant != variant {
                bail!("resume weights are {} but training.variant is {variant}", m.variant);
            }
            m
        }
        None => Regressor::new(variant, Default::default(), cfg.seed)?,
    };
    let outcome = train(model, &train_set, &test_set, &train_cfg, |r| {
        eprintln!("epoch {:3}  train {:.6e}  test {:.6e}", r.epoch, r.train_loss, r.test_loss)
    })?;
    let levels = evaluate_by_level(&outcome.best, &test_set)?;
    st.write(&format!("{variant}.weights"), |w| write_weights(&outcome.best, w))?;
    st.write("curve.csv", |w| io::write_curve(w, &outcome.curve))?;
    st.write("levels.csv", |w| io::write_levels(w, &levels))?;
    st.commit("train", inv)
}

/// Per-noise-level prediction summary of one weights file on the test split.
pub fn cmd_evaluate(inv: &Invocation, weights: &Path) -> Result<RunManifest> {
    let cfg = &inv.config;
    cfg.validate()?;
    let mut st = Staging::new(&inv.out, "evaluate")?;
    st.input(weights)?;
    let model = load_weights(weights).with_context(|| format!("loading {}", weights.display()))?;
    let test_set = read_split(&mut st, dataset_dir(cfg)?, "test.csv")?;
    let levels = evaluate_by_level(&model, &test_set)?;
    for l in &levels {
        eprintln!("q* {:.5}  mean {:.5}  relative error {:+.3}", l.q_star, l.mean_prediction, l.relative_error());
    }
    st.write(&format!("levels_{}.csv", model.variant), |w| io::write_levels(w, &levels))?;
    st.commit("evaluate", inv)
}

/// Monte-Carlo comparison of the configured policies on shared noise draws.
pub fn cmd_benchmark(inv: &Invocation) -> Result<RunManifest> {
    let cfg = &inv.config;
    cfg.validate()?;
    let named = cfg.policies()?;
    let scenario = cfg.scenario()?;
    let mut st = Staging::new(&inv.out, "benchmark")?;
    let mut models = Vec::new();
    for path in &cfg.benchmark.weights {
        st.input(path)?;
        models.push(load_weights(path).with_context(|| format!("loading {}", path.display()))?);
    }
    let policies: Vec<_> = named.iter().map(|(_, p)| *p).collect();
    let reports = run_campaign(&scenario, &policies, &models)?;
    let reference = named.iter().position(|(n, _)| n == "constant-true");
    let cis: Vec<Option<Interval>> = reports
        .iter()
        .map(|r| {
            reference.map(|i| {
                paired_bootstrap(
                    &r.smae_values(),
                    &reports[i].smae_values(),
                    cfg.benchmark.bootstrap_resamples,
                    cfg.benchmark.confidence,
                    cfg.seed,
                )
            })
            .transpose()
        })
        .collect::<insdvl::Result<_>>()?;
    for (r, (name, _)) in reports.iter().zip(&named) {
        eprintln!("{name:18} SRMSE {:.4}  SMAE {:.4}", r.srmse, r.smae);
    }
    st.write("results.csv", |w| io::write_results_table(w, &reports, &cis))?;
    st.write("runs.csv", |w| io::write_run_metrics(w, &reports))?;
    st.write("nees.csv", |w| io::write_nees(w, &reports))?;
    if cfg.benchmark.emit_traces {
        for (r, (name, _)) in reports.iter().zip(&named) {
            let rows = r.trace.as_deref().unwrap_or_default();
            st.write(&format!("traces/{}.csv", name.replace(':', "_")), |w| io::write_trace(w, rows))?;
        }
    }
    st.commit("benchmark", inv)
}

/// Re-runs the command recorded in `manifest` into `out`.
pub fn replay(manifest: &RunManifest, out: &Path) -> Result<RunManifest> {
    for (path, hash) in &manifest.inputs {
        let now = sha256_file(Path::new(path))?;
        if &now != hash {
            bail!("input {path} changed since the recorded run");
        }
    }
    let inv = Invocation { config: manifest.config.clone(), config_path: manifest.config_path.clone(), out: out.to_path_buf() };
    match manifest.command.as_str() {
        "simulate" => cmd_simulate(&inv),
        "build-dataset" => cmd_build_dataset(&inv),
        "train" => cmd_train(&inv),
        "benchmark" => cmd_benchmark(&inv),
        "evaluate" => {
            let weights = manifest.inputs.keys().find(|k| !k.ends_with(".csv")).context("manifest lists no weights")?;
            cmd_evaluate(&inv, Path::new(weights))
        }
        other => bail!("unknown command `{other}` in manifest"),
    }
}
