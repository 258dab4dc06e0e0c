//! TOML run configuration. Every key is optional; the defaults are the mission
//! parameters used throughout (330 s mission, 1 s DVL interval, matched noise).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use insdvl::bench::{Policy, ScenarioConfig, SensorNoise};
use insdvl::pronet::{DatasetConfig, Optimizer, TrainConfig, Variant};
use insdvl::sim::{noise_grid, TrajectoryKind};
use serde::{Deserialize, Serialize};

/// Annotated default configuration, as printed by `insdvl config`.
pub const DEFAULT_TOML: &str = r#"# Master seed: trajectory shape, sensor noise, dataset shuffles, weight init.
seed = 0

[mission]
trajectory = "eval-mixed"   # straight-line | turning-line | lawn-mower | dive-climb | eval-mixed
duration = 330.0            # s
imu_rate = 100.0            # Hz
dvl_interval = 1.0          # s, a whole number of IMU steps

[noise]
accel_variance = 0.01       # (m/s²)² per sample, each axis
gyro_variance = 0.001       # (rad/s)² per sample, each axis
dvl_variance = 0.01         # (m/s)² per fix, each axis

[filter]
r_variance = 0.01           # (m/s)², DVL measurement noise assumed by the filter
initial_q_f = 0.01          # starting Q for adaptive and learned policies
initial_q_w = 0.001
bias_variance = 0.001       # bias random-walk entries of Q
initial_error = true        # draw the initial velocity and attitude error from P0

[dataset]
kinds = ["straight-line", "turning-line", "lawn-mower", "dive-climb"]
duration = 400.0            # s per series
rate = 100.0                # Hz
grid_min = 0.001            # smallest noise variance
grid_max = 0.05             # largest noise variance
grid_count = 15             # log-spaced levels
window_len = 200            # samples
train_ratio = 0.8

[training]
variant = "detrend"         # baseline | detrend
epochs = 50
batch_size = 64
learning_rate = 1e-3
optimizer = "adam"          # adam | sgd
# dataset = "out/dataset"   # directory holding train.csv and test.csv
# resume = "out/train/detrend.weights"

[benchmark]
mc_runs = 100
tuning_rate = 1.0           # s between learned Q installs; inf never retunes
policies = ["constant-true", "constant-x20", "adaptive-1", "adaptive-5", "learned-baseline", "learned-detrend"]
bootstrap_resamples = 2000
confidence = 0.9
emit_traces = false
# weights = ["out/baseline/baseline.weights", "out/detrend/detrend.weights"]
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub mission: Mission,
    pub noise: Noise,
    pub filter: Filter,
    pub dataset: Dataset,
    pub training: Training,
    pub benchmark: Benchmark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mission {
    pub trajectory: String,
    pub duration: f64,
    pub imu_rate: f64,
    pub dvl_interval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Noise {
    pub accel_variance: f64,
    pub gyro_variance: f64,
    pub dvl_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Filter {
    pub r_variance: f64,
    pub initial_q_f: f64,
    pub initial_q_w: f64,
    pub bias_variance: f64,
    pub initial_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dataset {
    pub kinds: Vec<String>,
    pub duration: f64,
    pub rate: f64,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_count: usize,
    pub window_len: usize,
    pub train_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Training {
    pub variant: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Benchmark {
    pub mc_runs: usize,
    pub tuning_rate: f64,
    pub policies: Vec<String>,
    pub bootstrap_resamples: usize,
    pub confidence: f64,
    pub emit_traces: bool,
    pub weights: Vec<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            mission: Mission::default(),
            noise: Noise::default(),
            filter: Filter::default(),
            dataset: Dataset::default(),
            training: Training::default(),
            benchmark: Benchmark::default(),
        }
    }
}

impl Default for Mission {
    fn default() -> Self {
        Self { trajectory: "eval-mixed".into(), duration: 330.0, imu_rate: 100.0, dvl_interval: 1.0 }
    }
}

impl Default for Noise {
    fn default() -> Self {
        Self { accel_variance: 0.01, gyro_variance: 0.001, dvl_variance: 0.01 }
    }
}

impl Default for Filter {
    fn default() -> Self {
        Self { r_variance: 0.01, initial_q_f: 0.01, initial_q_w: 0.001, bias_variance: 0.001, initial_error: true }
    }
}

impl Default for Dataset {
    fn default() -> Self {
        Self {
            kinds: TrajectoryKind::TRAINING.iter().map(|k| k.name().to_string()).collect(),
            duration: 400.0,
            rate: 100.0,
            grid_min: 0.001,
            grid_max: 0.05,
            grid_count: 15,
            window_len: 200,
            train_ratio: 0.8,
        }
    }
}

impl Default for Training {
    fn default() -> Self {
        Self {
            variant: "detrend".into(),
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: "adam".into(),
            dataset: None,
            resume: None,
        }
    }
}

impl Default for Benchmark {
    fn default() -> Self {
        Self {
            mc_runs: 100,
            tuning_rate: 1.0,
            policies: ["constant-true", "constant-x20", "adaptive-1", "adaptive-5", "learned-baseline", "learned-detrend"]
                .map(String::from)
                .to_vec(),
            bootstrap_resamples: 2000,
            confidence: 0.9,
            emit_traces: false,
            weights: Vec::new(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: Config = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.trajectory()?;
        self.dataset_config()?;
        self.train_config()?;
        self.variant()?;
        self.policies()?;
        if self.benchmark.mc_runs == 0 {
            bail!("benchmark.mc_runs must be at least 1");
        }
        Ok(())
    }

    pub fn trajectory(&self) -> Result<TrajectoryKind> {
        kind(&self.mission.trajectory)
    }

    pub fn variant(&self) -> Result<Variant> {
        Variant::from_name(&self.training.variant)
            .with_context(|| format!("unknown variant `{}` (baseline | detrend)", self.training.variant))
    }

    pub fn scenario(&self) -> Result<ScenarioConfig> {
        let f = &self.filter;
        Ok(ScenarioConfig {
            trajectory: self.trajectory()?,
            duration: self.mission.duration,
            imu_rate: self.mission.imu_rate,
            dvl_interval: self.mission.dvl_interval,
            noise: SensorNoise {
                accel_variance: self.noise.accel_variance,
                gyro_variance: self.noise.gyro_variance,
                dvl_variance: self.noise.dvl_variance,
            },
            r_variance: f.r_variance,
            initial_q_f: f.initial_q_f,
            initial_q_w: f.initial_q_w,
            bias_variance: f.bias_variance,
            initial_error: f.initial_error,
            mc_runs: self.benchmark.mc_runs,
            seed: self.seed,
            keep_trace: self.benchmark.emit_traces,
            ..ScenarioConfig::default()
        })
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig> {
        let d = &self.dataset;
        Ok(DatasetConfig {
            kinds: d.kinds.iter().map(|k| kind(k)).collect::<Result<_>>()?,
            duration: d.duration,
            rate: d.rate,
            noise_grid: noise_grid(d.grid_min, d.grid_max, d.grid_count)?,
            window_len: d.window_len,
            train_ratio: d.train_ratio,
            seed: self.seed,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.training;
        let optimizer = match t.optimizer.as_str() {
            "adam" => Optimizer::Adam,
            "sgd" => Optimizer::Sgd,
            other => bail!("unknown optimizer `{other}` (adam | sgd)"),
        };
        Ok(TrainConfig { epochs: t.epochs, batch_size: t.batch_size, learning_rate: t.learning_rate, optimizer, seed: self.seed })
    }

    /// Benchmark policies with their names, in table order.
    pub fn policies(&self) -> Result<Vec<(String, Policy)>> {
        if self.benchmark.policies.is_empty() {
            bail!("benchmark.policies is empty");
        }
        self.benchmark.policies.iter().map(|name| Ok((name.clone(), self.policy(name)?))).collect()
    }

    /// `constant-true`, `constant-x20`, `constant:<q_f>:<q_w>`, `adaptive-<window>`,
    /// `learned-baseline`, `learned-detrend`.
    pub fn policy(&self, name: &str) -> Result<Policy> {
        let (qf, qw) = (self.noise.accel_variance, self.noise.gyro_variance);
        let rate = self.benchmark.tuning_rate;
        let tuning_rate = if rate.is_infinite() && rate > 0.0 {
            None
        } else if rate.is_finite() && rate > 0.0 {
            Some(rate)
        } else {
            bail!("tuning rate must be positive, got {rate}");
        };
        Ok(match name {
            "constant-true" => Policy::ConstantQ { q_f: qf, q_w: qw },
            "constant-x20" => Policy::ConstantQ { q_f: 20.0 * qf, q_w: 20.0 * qw },
            "learned-baseline" => Policy::Learned { variant: Variant::Baseline, tuning_rate },
            "learned-detrend" => Policy::Learned { variant: Variant::Detrend, tuning_rate },
            _ => {
                if let Some(w) = name.strip_prefix("adaptive-") {
                    let window = w.parse().with_context(|| format!("bad adaptive window in `{name}`"))?;
                    if window == 0 {
                        bail!("adaptive window must be at least 1");
                    }
                    Policy::InnovationAdaptive { window }
                } else if let Some(rest) = name.strip_prefix("constant:") {
                    let parts: Vec<&str> = rest.split(':').collect();
                    let [a, b] = parts[..] else { bail!("expected constant:<q_f>:<q_w>, got `{name}`") };
                    Policy::ConstantQ { q_f: a.parse()?, q_w: b.parse()? }
                } else {
                    bail!("unknown policy `{name}`");
                }
            }
        })
    }
}

fn kind(name: &str) -> Result<TrajectoryKind> {
    TrajectoryKind::from_name(name).with_context(|| format!("unknown trajectory `{name}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = Config::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.mission.duration, 330.0);
        assert_eq!(cfg.benchmark.policies.len(), 6);
        let back: Config = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(toml::from_str::<Config>(DEFAULT_TOML).unwrap(), cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg: Config = toml::from_str("seed = 4\n[benchmark]\nmc_runs = 3\n").unwrap();
        assert_eq!((cfg.seed, cfg.benchmark.mc_runs), (4, 3));
        assert_eq!(cfg.noise, Noise::default());
        assert!(toml::from_str::<Config>("[noise]\naccel = 1.0\n").is_err());
    }

    #[test]
    fn policy_names() {
        let mut cfg = Config::default();
        assert_eq!(cfg.policy("constant-x20").unwrap(), Policy::ConstantQ { q_f: 0.2, q_w: 0.02 });
        assert_eq!(cfg.policy("adaptive-5").unwrap(), Policy::InnovationAdaptive { window: 5 });
        assert_eq!(cfg.policy("constant:0.5:0.25").unwrap(), Policy::ConstantQ { q_f: 0.5, q_w: 0.25 });
        assert!(cfg.policy("adaptive-0").is_err() && cfg.policy("other").is_err());
        cfg.benchmark.tuning_rate = f64::INFINITY;
        assert_eq!(cfg.policy("learned-detrend").unwrap(), Policy::Learned { variant: Variant::Detrend, tuning_rate: None });
    }
}
