use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Q_MAX, Q_MIN, WINDOW_LEN};
use crate::error::{invalid, Error, Result};
use crate::sim::{corrupt_imu, generate_trajectory, invert_trajectory, noise_grid, NoiseProfile, TrajectoryKind};
use crate::strapdown::ImuSample;

/// Consecutive readings of one inertial channel (0..=2 accelerometer, 3..=5 gyro).
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub values: Vec<f64>,
    pub channel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub window: Window,
    pub q_star: f64,
    pub kind: TrajectoryKind,
    /// Index of `q_star` in the noise grid.
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub kinds: Vec<TrajectoryKind>,
    pub duration: f64,
    pub rate: f64,
    pub noise_grid: Vec<f64>,
    pub window_len: usize,
    pub train_ratio: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kinds: TrajectoryKind::TRAINING.to_vec(),
            duration: 400.0,
            rate: 100.0,
            noise_grid: noise_grid(Q_MIN, Q_MAX, 15).expect("valid default grid"),
            window_len: WINDOW_LEN,
            train_ratio: 0.8,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() || self.noise_grid.is_empty() {
            return Err(invalid("dataset needs at least one trajectory kind and one noise level"));
        }
        let tol = 1e-12;
        if let Some(q) = self.noise_grid.iter().find(|q| !(**q >= Q_MIN - tol && **q <= Q_MAX + tol)) {
            return Err(invalid(format!("noise level {q} lies outside [{Q_MIN}, {Q_MAX}]")));
        }
        if self.window_len < 2 {
            return Err(invalid("window length must be at least 2"));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(invalid(format!("train ratio must lie in (0, 1), got {}", self.train_ratio)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<TrainingExample>,
    pub test: Vec<TrainingExample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `(train, test)` sizes for a group of `n` examples.
pub fn split_counts(n: usize, train_ratio: f64) -> (usize, usize) {
    let train = ((n as f64) * train_ratio).round() as usize;
    (train.min(n), n - train.min(n))
}

fn series_seed(seed: u64, kind: usize, level: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((kind as u64) << 32 | level as u64).wrapping_add(1)
}

/// Cuts each channel of `imu` into non-overlapping windows of `len` samples.
/// A trailing partial window is dropped.
pub(crate) fn channel_windows(imu: &[ImuSample], len: usize) -> Vec<Window> {
    let per_channel = imu.len() / len;
    let mut out = Vec::with_capacity(6 * per_channel);
    for channel in 0..6 {
        for w in 0..per_channel {
            let values = imu[w * len..(w + 1) * len].iter().map(|s| s.channel(channel)).collect();
            out.push(Window { values, channel });
        }
    }
    out
}

/// Builds the labeled window dataset: every trajectory kind is corrupted at every
/// noise level (same variance on all six channels), cut into windows, and each
/// `(kind, level)` group is shuffled and split so both sets contain all groups.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let perfect: Vec<Vec<ImuSample>> = cfg
        .kinds
        .par_iter()
        .enumerate()
        .map(|(i, kind)| {
            let truth = generate_trajectory(*kind, cfg.duration, cfg.rate, cfg.seed.wrapping_add(i as u64))?;
            invert_trajectory(&truth)
        })
        .collect::<Result<_>>()?;

    let expected = 6 * (perfect[0].len() / cfg.window_len);
    if expected == 0 {
        return Err(invalid("trajectory is shorter than one window"));
    }
    let groups: Vec<(usize, usize)> =
        (0..cfg.kinds.len()).flat_map(|k| (0..cfg.noise_grid.len()).map(move |l| (k, l))).collect();

    let parts: Vec<(Vec<TrainingExample>, Vec<TrainingExample>)> = groups
        .par_iter()
        .map(|&(k, l)| {
            let seed = series_seed(cfg.seed, k, l);
            let q = cfg.noise_grid[l];
            let noisy = corrupt_imu(&perfect[k], &NoiseProfile::uniform_imu(q, seed))?;
            let mut examples: Vec<TrainingExample> = channel_windows(&noisy, cfg.window_len)
                .into_iter()
                .map(|window| TrainingExample { window, q_star: q, kind: cfg.kinds[k], level: l })
                .collect();
            if examples.len() != expected {
                return Err(Error::ShapeMismatch { context: "windows per series", expected, actual: examples.len() });
            }
            examples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5EED));
            let (n_train, _) = split_counts(examples.len(), cfg.train_ratio);
            let test = examples.split_off(n_train);
            Ok((examples, test))
        })
        .collect::<Result<_>>()?;

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (a, b) in parts {
        train.extend(a);
        test.extend(b);
    }
    let total = groups.len() * expected;
    if train.len() + test.len() != total {
        return Err(Error::ShapeMismatch { context: "dataset examples", expected: total, actual: train.len() + test.len() });
    }
    Ok(Dataset { train, test })
}
