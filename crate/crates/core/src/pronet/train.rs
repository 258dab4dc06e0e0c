use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Regressor, TrainingExample, Q_MAX, Q_MIN};
use crate::error::{invalid, Error, Result};

/// Examples per parallel work item. Fixed so the reduction order, and thus the
/// result, does not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 64, learning_rate: 1e-3, optimizer: Optimizer::Adam, seed: 0 }
    }
}

/// Mean squared error between predictions and labels.
pub fn mse(predicted: &[f64], target: &[f64]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != target.len() {
        return Err(invalid(format!("mse needs equal non-empty inputs, got {} and {}", predicted.len(), target.len())));
    }
    Ok(predicted.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / predicted.len() as f64)
}

fn predictions(model: &Regressor, batch: &[TrainingExample]) -> Result<Vec<f64>> {
    let chunks: Vec<Vec<f64>> = batch
        .par_chunks(CHUNK)
        .map(|c| c.iter().map(|e| model.forward(&e.window.values)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Mean squared error of the unclamped network output over `batch`.
pub fn loss(model: &Regressor, batch: &[TrainingExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(invalid("loss of an empty batch"));
    }
    let target: Vec<f64> = batch.iter().map(|e| e.q_star).collect();
    mse(&predictions(model, batch)?, &target)
}

/// Loss and its gradient with respect to every parameter.
pub fn gradient(model: &Regressor, batch: &[TrainingExample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(invalid("gradient of an empty batch"));
    }
    for e in batch {
        if e.window.values.len() != model.arch.input_len {
            return Err(Error::ShapeMismatch {
                context: "regressor input window",
                expected: model.arch.input_len,
                actual: e.window.values.len(),
            });
        }
    }
    let m = batch.len() as f64;
    let partial: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .map(|c| {
            let mut grad = vec![0.0; model.param_count()];
            let mut sq = 0.0;
            for e in c {
                let acts = model.activations(&e.window.values);
                let r = acts.output - e.q_star;
                sq += r * r;
                model.backward(&acts, 2.0 * r / m, &mut grad);
            }
            (sq, grad)
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; model.param_count()];
    for (sq, g) in partial {
        total += sq;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total / m, grad))
}

/// Adaptive-moment optimizer with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 0 is the untrained (or resumed) model.
    pub epoch: usize,
    /// Mean minibatch loss over the epoch; full training-set loss for epoch 0.
    pub train_loss: f64,
    pub test_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest test loss.
    pub best: Regressor,
    pub best_epoch: usize,
    pub curve: Vec<EpochRecord>,
}

/// Minibatch training of `model` on `train_set`, selecting the epoch with the
/// lowest `test_set` loss. `on_epoch` sees each record as it is produced.
pub fn train(
    model: Regressor,
    train_set: &[TrainingExample],
    test_set: &[TrainingExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train_set.is_empty() || test_set.is_empty() {
        return Err(invalid("training needs non-empty train and test sets"));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(invalid(format!("unusable training configuration {cfg:?}")));
    }
    let mut model = model;
    let initial =
        EpochRecord { epoch: 0, train_loss: loss(&model, train_set)?, test_loss: loss(&model, test_set)? };
    if !initial.train_loss.is_finite() || !initial.test_loss.is_finite() {
        return Err(Error::Diverged { epoch: 0, loss: initial.train_loss });
    }
    on_epoch(&initial);
    let mut curve = vec![initial];
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_loss = initial.test_loss;

    let mut adam = Adam::new(model.param_count(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| train_set[i].clone()));
            let (l, g) = gradient(&model, &batch)?;
            if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { epoch, loss: l });
            }
            match cfg.optimizer {
                Optimizer::Adam => adam.step(&mut model.params, &g),
                Optimizer::Sgd => {
                    for (p, gi) in model.params.iter_mut().zip(&g) {
                        *p -= cfg.learning_rate * gi;
                    }
                }
            }
            sum += l;
            batches += 1;
        }
        let test_loss = loss(&model, test_set)?;
        if !test_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: test_loss });
        }
        let record = EpochRecord { epoch, train_loss: sum / batches as f64, test_loss };
        on_epoch(&record);
        curve.push(record);
        if test_loss < best_loss {
            best_loss = test_loss;
            best = model.clone();
            best_epoch = epoch;
        }
    }
    Ok(TrainOutcome { best, best_epoch, curve })
}

/// Prediction statistics for one label value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSummary {
    pub q_star: f64,
    pub count: usize,
    /// Mean of the clamped predictions.
    pub mean_prediction: f64,
    pub std_prediction: f64,
}

impl LevelSummary {
    pub fn relative_error(&self) -> f64 {
        (self.mean_prediction - self.q_star) / self.q_star
    }
}

/// Clamped predictions grouped by label, sorted by label.
pub fn evaluate_by_level(model: &Regressor, examples: &[TrainingExample]) -> Result<Vec<LevelSummary>> {
    let pred = predictions(model, examples)?;
    let mut levels: Vec<f64> = examples.iter().map(|e| e.q_star).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    Ok(levels
        .into_iter()
        .map(|q| {
            let v: Vec<f64> = examples
                .iter()
                .zip(&pred)
                .filter(|(e, _)| e.q_star == q)
                .map(|(_, p)| p.clamp(Q_MIN, Q_MAX))
                .collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
            LevelSummary { q_star: q, count: v.len(), mean_prediction: mean, std_prediction: var.sqrt() }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pronet::{Architecture, Variant, Window};
    use crate::sim::TrajectoryKind;
    use rand::Rng;

    fn tiny_arch() -> Architecture {
        Architecture { input_len: 20, conv_channels: [2, 3, 3], kernel: 3, hidden: [4, 3, 2], output_scale: 0.01 }
    }

    fn examples(n: usize, len: usize, seed: u64) -> Vec<TrainingExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let q: f64 = rng.random_range(0.001..0.05);
                let values = (0..len).map(|_| q.sqrt() * rng.random_range(-1.7..1.7) + 0.01 * i as f64).collect();
                TrainingExample { window: Window { values, channel: i % 6 }, q_star: q, kind: TrajectoryKind::StraightLine, level: 0 }
            })
            .collect()
    }

    #[test]
    fn loss_examples() {
        assert_eq!(mse(&[0.02, 0.03], &[0.02, 0.03]).unwrap(), 0.0);
        assert!((mse(&[0.04], &[0.05]).unwrap() - 1e-4).abs() < 1e-15);
        assert!((mse(&[0.01, 0.03], &[0.0, 0.0]).unwrap() - 5e-4).abs() < 1e-15);
        assert!(mse(&[], &[]).is_err());
        let m = Regressor::new(Variant::Baseline, tiny_arch(), 0).unwrap();
        assert!(loss(&m, &[]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        for variant in [Variant::Baseline, Variant::Detrend] {
            let m = Regressor::new(variant, tiny_arch(), 11).unwrap();
            let batch = examples(10, 20, 12);
            let (l, g) = gradient(&m, &batch).unwrap();
            assert!((l - loss(&m, &batch).unwrap()).abs() < 1e-15);
            let h = 1e-5;
            for i in 0..m.param_count() {
                let mut plus = m.clone();
                plus.params[i] += h;
                let mut minus = m.clone();
                minus.params[i] -= h;
                let fd = (loss(&plus, &batch).unwrap() - loss(&minus, &batch).unwrap()) / (2.0 * h);
                let denom = g[i].abs().max(fd.abs()).max(1e-10);
                assert!((g[i] - fd).abs() / denom < 1e-4, "{variant} param {i}: {} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn gradient_independent_of_thread_count() {
        let m = Regressor::new(Variant::Baseline, tiny_arch(), 3).unwrap();
        let batch = examples(37, 20, 4);
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| gradient(&m, &batch));
        let parallel = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| gradient(&m, &batch));
        let (a, b) = (serial.unwrap(), parallel.unwrap());
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut adam = Adam::new(2, 0.05);
        let mut p = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            adam.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn first_epoch_reduces_loss_and_best_is_selected() {
        let train_set = examples(256, 20, 5);
        let test_set = examples(64, 20, 6);
        let m = Regressor::new(Variant::Detrend, tiny_arch(), 7).unwrap();
        let cfg = TrainConfig { epochs: 3, batch_size: 16, ..TrainConfig::default() };
        let mut seen = 0;
        let out = train(m, &train_set, &test_set, &cfg, |_| seen += 1).unwrap();
        assert_eq!(seen, 4);
        assert!(out.curve[1].train_loss < out.curve[0].train_loss);
        let best = out.curve.iter().map(|r| r.test_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(out.curve[out.best_epoch].test_loss, best);
        assert!((loss(&out.best, &test_set).unwrap() - best).abs() < 1e-15);
    }

    #[test]
    fn memorizes_ten_examples() {
        let arch = Architecture { input_len: 40, conv_channels: [4, 8, 8], kernel: 5, hidden: [16, 8, 4], output_scale: 0.01 };
        let batch = examples(10, 40, 8);
        let mut m = Regressor::new(Variant::Baseline, arch, 9).unwrap();
        let mut adam = Adam::new(m.param_count(), 1e-3);
        let mut l = f64::INFINITY;
        for _ in 0..2000 {
            let (li, g) = gradient(&m, &batch).unwrap();
            l = li;
            if l < 1e-7 {
                break;
            }
            adam.step(&mut m.params, &g);
        }
        assert!(l < 1e-7, "loss {l}");
    }

    #[test]
    fn divergence_is_reported() {
        let train_set = examples(32, 20, 5);
        let m = Regressor::new(Variant::Baseline, tiny_arch(), 7).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 8, learning_rate: 1e300, optimizer: Optimizer::Sgd, seed: 0 };
        assert!(matches!(train(m, &train_set, &train_set, &cfg, |_| {}), Err(Error::Diverged { .. })));
    }
}
