//! Learned process-noise regression.
//!
//! A single network maps a window of one inertial channel to the variance of
//! the white noise on that channel. The stack is three valid 1-D convolutions
//! (each followed by layer normalization and a leaky ReLU), a global average
//! pool, and four fully connected layers with leaky ReLUs between them. The
//! detrend variant removes the least-squares line from the window first.
//!
//! All parameters live in one flat vector; [`ParamLayout`] records where each
//! tensor sits, which keeps the optimizer, gradient checking and serialization
//! layer-agnostic.

mod dataset;
mod detrend;
mod kernels;
pub mod layers;
mod train;
mod weights;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use layers::*;

pub use dataset::{build_dataset, split_counts, Dataset, DatasetConfig, TrainingExample, Window};
pub use detrend::detrend;
pub use train::{
    evaluate_by_level, gradient, loss, mse, train, Adam, EpochRecord, LevelSummary, Optimizer, TrainConfig,
    TrainOutcome,
};
pub use weights::{load_weights, read_weights, save_weights, write_weights};

/// Default window length (two seconds at 100 Hz).
pub const WINDOW_LEN: usize = 200;

/// Range the regressor is trained on; inferred variances are clamped into it.
pub const Q_MIN: f64 = 0.001;
pub const Q_MAX: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    Detrend,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Detrend => "detrend",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "baseline" => Some(Variant::Baseline),
            "detrend" => Some(Variant::Detrend),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Layer sizes of the regressor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub input_len: usize,
    pub conv_channels: [usize; 3],
    pub kernel: usize,
    /// Widths of the three hidden linear layers; the fourth maps to the scalar output.
    pub hidden: [usize; 3],
    /// Fixed factor applied to the last linear layer, in units of variance.
    pub output_scale: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { input_len: WINDOW_LEN, conv_channels: [16, 32, 32], kernel: 5, hidden: [64, 32, 16], output_scale: 0.01 }
    }
}

impl Architecture {
    pub fn conv_shapes(&self) -> [ConvShape; 3] {
        let mut in_channels = 1;
        let mut in_len = self.input_len;
        std::array::from_fn(|i| {
            let shape = ConvShape { in_channels, out_channels: self.conv_channels[i], kernel: self.kernel, in_len };
            in_channels = shape.out_channels;
            in_len = shape.out_len();
            shape
        })
    }

    /// `(inputs, outputs)` of the four linear layers.
    pub fn linear_shapes(&self) -> [(usize, usize); 4] {
        let widths = [self.conv_channels[2], self.hidden[0], self.hidden[1], self.hidden[2], 1];
        std::array::from_fn(|i| (widths[i], widths[i + 1]))
    }

    fn validate(&self) -> Result<()> {
        let min_len = 3 * (self.kernel.max(1) - 1) + 1;
        if self.kernel == 0
            || self.input_len < min_len.max(2)
            || self.conv_channels.contains(&0)
            || self.hidden.contains(&0)
            || !(self.output_scale.is_finite() && self.output_scale > 0.0)
        {
            return Err(Error::InvalidArgument(format!("unusable architecture {self:?}")));
        }
        Ok(())
    }
}

/// Offset and length of one parameter tensor in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub weight: Span,
    pub bias: Span,
    pub gain: Span,
    pub offset: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearParams {
    pub weight: Span,
    pub bias: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub conv: [ConvParams; 3],
    pub linear: [LinearParams; 4],
    pub total: usize,
}

impl ParamLayout {
    pub fn new(arch: &Architecture) -> Self {
        let mut cursor = 0;
        let mut take = |len: usize| {
            let span = Span { start: cursor, len };
            cursor += len;
            span
        };
        let conv = arch.conv_shapes().map(|s| ConvParams {
            weight: take(s.weight_len()),
            bias: take(s.out_channels),
            gain: take(s.out_channels),
            offset: take(s.out_channels),
        });
        let linear = arch.linear_shapes().map(|(i, o)| LinearParams { weight: take(i * o), bias: take(o) });
        Self { conv, linear, total: cursor }
    }

    /// Named tensors with their shapes, in storage order.
    pub fn tensors(&self, arch: &Architecture) -> Vec<(String, Vec<usize>, Span)> {
        let mut out = Vec::new();
        for (i, (p, s)) in self.conv.iter().zip(arch.conv_shapes()).enumerate() {
            let n = i + 1;
            out.push((format!("conv{n}.weight"), vec![s.out_channels, s.in_channels, s.kernel], p.weight));
            out.push((format!("conv{n}.bias"), vec![s.out_channels], p.bias));
            out.push((format!("norm{n}.gain"), vec![s.out_channels], p.gain));
            out.push((format!("norm{n}.offset"), vec![s.out_channels], p.offset));
        }
        for (i, (p, (n_in, n_out))) in self.linear.iter().zip(arch.linear_shapes()).enumerate() {
            let n = i + 1;
            out.push((format!("linear{n}.weight"), vec![n_out, n_in], p.weight));
            out.push((format!("linear{n}.bias"), vec![n_out], p.bias));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub variant: Variant,
    pub arch: Architecture,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    pub input: Vec<f64>,
    pub conv_normalized: [Vec<f64>; 3],
    pub conv_inv_std: [f64; 3],
    /// Layer-norm outputs (leaky ReLU inputs).
    pub conv_pre: [Vec<f64>; 3],
    pub conv_act: [Vec<f64>; 3],
    pub pooled: Vec<f64>,
    pub linear_pre: [Vec<f64>; 4],
    pub linear_act: [Vec<f64>; 3],
    pub output: f64,
}

impl Regressor {
    /// Fresh model with uniform fan-in initialization (`±1/√fan_in`) for weights
    /// and biases, unit gains and zero offsets.
    pub fn new(variant: Variant, arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = ParamLayout::new(&arch);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |span: Span, fan_in: usize, params: &mut [f64]| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut params[span.range()] {
                *v = rng.random_range(-bound..bound);
            }
        };
        for (p, s) in layout.conv.iter().zip(arch.conv_shapes()) {
            let fan_in = s.in_channels * s.kernel;
            fill(p.weight, fan_in, &mut params);
            fill(p.bias, fan_in, &mut params);
            params[p.gain.range()].fill(1.0);
        }
        for (p, (n_in, _)) in layout.linear.iter().zip(arch.linear_shapes()) {
            fill(p.weight, n_in, &mut params);
            fill(p.bias, n_in, &mut params);
        }
        Ok(Self { variant, arch, layout, params })
    }

    pub fn from_params(variant: Variant, arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = ParamLayout::new(&arch);
        if params.len() != layout.total {
            return Err(Error::ShapeMismatch { context: "regressor parameters", expected: layout.total, actual: params.len() });
        }
        if !params.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("regressor parameters"));
        }
        Ok(Self { variant, arch, layout, params })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    fn slice(&self, span: Span) -> &[f64] {
        &self.params[span.range()]
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.arch.input_len {
            return Err(Error::ShapeMismatch { context: "regressor input window", expected: self.arch.input_len, actual: len });
        }
        Ok(())
    }

    /// Predicted variance for one window (unclamped).
    pub fn forward(&self, window: &[f64]) -> Result<f64> {
        self.check_len(window.len())?;
        Ok(self.activations(window).output)
    }

    pub(crate) fn activations(&self, window: &[f64]) -> Activations {
        let mut input = window.to_vec();
        if self.variant == Variant::Detrend {
            detrend::detrend_in_place(&mut input);
        }
        let shapes = self.arch.conv_shapes();
        let mut conv_normalized: [Vec<f64>; 3] = Default::default();
        let mut conv_pre: [Vec<f64>; 3] = Default::default();
        let mut conv_act: [Vec<f64>; 3] = Default::default();
        let mut conv_inv_std = [0.0; 3];
        for (l, (shape, p)) in shapes.iter().zip(&self.layout.conv).enumerate() {
            let n = shape.out_channels * shape.out_len();
            let mut raw = vec![0.0; n];
            let x = if l == 0 { &input } else { &conv_act[l - 1] };
            conv1d_forward(shape, self.slice(p.weight), self.slice(p.bias), x, &mut raw);
            let mut normalized = vec![0.0; n];
            let mut pre = vec![0.0; n];
            conv_inv_std[l] = layer_norm_forward(
                shape.out_channels,
                shape.out_len(),
                &raw,
                self.slice(p.gain),
                self.slice(p.offset),
                &mut normalized,
                &mut pre,
            );
            let mut act = vec![0.0; n];
            leaky_relu_forward(&pre, &mut act);
            conv_normalized[l] = normalized;
            conv_pre[l] = pre;
            conv_act[l] = act;
        }
        let last = shapes[2];
        let mut pooled = vec![0.0; last.out_channels];
        global_average_pool_forward(last.out_channels, last.out_len(), &conv_act[2], &mut pooled);

        let mut linear_pre: [Vec<f64>; 4] = Default::default();
        let mut linear_act: [Vec<f64>; 3] = Default::default();
        for (l, ((n_in, n_out), p)) in self.arch.linear_shapes().into_iter().zip(&self.layout.linear).enumerate() {
            let x = if l == 0 { &pooled } else { &linear_act[l - 1] };
            let mut pre = vec![0.0; n_out];
            linear_forward(n_in, n_out, self.slice(p.weight), self.slice(p.bias), x, &mut pre);
            if l < 3 {
                let mut act = vec![0.0; n_out];
                leaky_relu_forward(&pre, &mut act);
                linear_act[l] = act;
            }
            linear_pre[l] = pre;
        }
        let output = self.arch.output_scale * linear_pre[3][0];
        Activations {
            input,
            conv_normalized,
            conv_inv_std,
            conv_pre,
            conv_act,
            pooled,
            linear_pre,
            linear_act,
            output,
        }
    }

    /// Accumulates `d_output · ∂output/∂θ` into `grad`.
    pub(crate) fn backward(&self, acts: &Activations, d_output: f64, grad: &mut [f64]) {
        let lin = self.arch.linear_shapes();
        let mut g = vec![d_output * self.arch.output_scale];
        for l in (0..4).rev() {
            let (n_in, n_out) = lin[l];
            let p = self.layout.linear[l];
            let x = if l == 0 { &acts.pooled } else { &acts.linear_act[l - 1] };
            let mut gx = vec![0.0; n_in];
            let (gw, gb) = split_two(grad, p.weight, p.bias);
            linear_backward(n_in, n_out, self.slice(p.weight), x, &g, gw, gb, Some(&mut gx));
            if l > 0 {
                leaky_relu_backward(&acts.linear_pre[l - 1], &mut gx);
            }
            g = gx;
        }

        let shapes = self.arch.conv_shapes();
        let last = shapes[2];
        let mut gmap = vec![0.0; last.out_channels * last.out_len()];
        global_average_pool_backward(last.out_channels, last.out_len(), &g, &mut gmap);
        for l in (0..3).rev() {
            let shape = shapes[l];
            let p = self.layout.conv[l];
            leaky_relu_backward(&acts.conv_pre[l], &mut gmap);
            {
                let (gg, go) = split_two(grad, p.gain, p.offset);
                layer_norm_backward(
                    shape.out_channels,
                    shape.out_len(),
                    &acts.conv_normalized[l],
                    acts.conv_inv_std[l],
                    self.slice(p.gain),
                    &mut gmap,
                    gg,
                    go,
                );
            }
            let x = if l == 0 { &acts.input } else { &acts.conv_act[l - 1] };
            let (gw, gb) = split_two(grad, p.weight, p.bias);
            if l == 0 {
                conv1d_backward(&shape, self.slice(p.weight), x, &gmap, gw, gb, None);
            } else {
                let mut gx = vec![0.0; shape.in_channels * shape.in_len];
                conv1d_backward(&shape, self.slice(p.weight), x, &gmap, gw, gb, Some(&mut gx));
                gmap = gx;
            }
        }
    }

    /// Per-channel clamped variances from six windows ordered (f_x, f_y, f_z, ω_x, ω_y, ω_z).
    pub fn infer_q(&self, recent: &[&[f64]; 6]) -> Result<(Vector3<f64>, Vector3<f64>)> {
        let mut q = [0.0; 6];
        for (qi, w) in q.iter_mut().zip(recent) {
            *qi = self.forward(w)?.clamp(Q_MIN, Q_MAX);
        }
        Ok((Vector3::new(q[0], q[1], q[2]), Vector3::new(q[3], q[4], q[5])))
    }
}

/// Two disjoint mutable sub-slices; `first` must precede `second`.
fn split_two(buf: &mut [f64], first: Span, second: Span) -> (&mut [f64], &mut [f64]) {
    debug_assert!(first.start + first.len <= second.start);
    let (a, b) = buf.split_at_mut(second.start);
    (&mut a[first.range()], &mut b[..second.len])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn small_arch() -> Architecture {
        Architecture { input_len: 24, conv_channels: [3, 4, 4], kernel: 3, hidden: [5, 4, 3], output_scale: 0.01 }
    }

    fn noise(seed: u64, n: usize, sd: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| sd * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect::<Vec<f64>>()
    }

    /// Straight-line evaluation of the layer stack with explicit index loops.
    fn reference_forward(m: &Regressor, window: &[f64]) -> f64 {
        let lrelu = |a: f64| if a > 0.0 { a } else { 0.01 * a };
        let mut x: Vec<Vec<f64>> = vec![if m.variant == Variant::Detrend {
            detrend(window).unwrap()
        } else {
            window.to_vec()
        }];
        for (s, p) in m.arch.conv_shapes().iter().zip(&m.layout.conv) {
            let (w, b) = (&m.params[p.weight.range()], &m.params[p.bias.range()]);
            let l_out = s.out_len();
            let mut y = vec![vec![0.0; l_out]; s.out_channels];
            for o in 0..s.out_channels {
                for t in 0..l_out {
                    let mut acc = b[o];
                    for i in 0..s.in_channels {
                        for k in 0..s.kernel {
                            acc += w[(o * s.in_channels + i) * s.kernel + k] * x[i][t + k];
                        }
                    }
                    y[o][t] = acc;
                }
            }
            let n = (s.out_channels * l_out) as f64;
            let mean = y.iter().flatten().sum::<f64>() / n;
            let var = y.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let (g, off) = (&m.params[p.gain.range()], &m.params[p.offset.range()]);
            for o in 0..s.out_channels {
                for t in 0..l_out {
                    y[o][t] = lrelu(g[o] * (y[o][t] - mean) / (var + 1e-5).sqrt() + off[o]);
                }
            }
            x = y;
        }
        let mut h: Vec<f64> = x.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        for (l, ((n_in, n_out), p)) in m.arch.linear_shapes().into_iter().zip(&m.layout.linear).enumerate() {
            let (w, b) = (&m.params[p.weight.range()], &m.params[p.bias.range()]);
            let mut y = vec![0.0; n_out];
            for o in 0..n_out {
                y[o] = b[o] + (0..n_in).map(|i| w[o * n_in + i] * h[i]).sum::<f64>();
                if l < 3 {
                    y[o] = lrelu(y[o]);
                }
            }
            h = y;
        }
        m.arch.output_scale * h[0]
    }

    #[test]
    fn layout_covers_every_parameter_once() {
        let arch = Architecture::default();
        let layout = ParamLayout::new(&arch);
        let tensors = layout.tensors(&arch);
        let mut cursor = 0;
        for (_, shape, span) in &tensors {
            assert_eq!(span.start, cursor);
            assert_eq!(span.len, shape.iter().product::<usize>());
            cursor += span.len;
        }
        assert_eq!(cursor, layout.total);
        assert_eq!(tensors.len(), 3 * 4 + 4 * 2);
        assert_eq!(arch.linear_shapes(), [(32, 64), (64, 32), (32, 16), (16, 1)]);
        assert_eq!(arch.conv_shapes()[2].out_len(), 188);
    }

    #[test]
    fn zero_window_with_zero_biases_gives_zero() {
        let mut m = Regressor::new(Variant::Baseline, Architecture::default(), 1).unwrap();
        let layout = m.layout;
        for p in layout.conv {
            m.params[p.bias.range()].fill(0.0);
            m.params[p.offset.range()].fill(0.0);
        }
        for p in layout.linear {
            m.params[p.bias.range()].fill(0.0);
        }
        assert_eq!(m.forward(&[0.0; WINDOW_LEN]).unwrap(), 0.0);
    }

    #[test]
    fn forward_matches_reference_evaluation() {
        for variant in [Variant::Baseline, Variant::Detrend] {
            let m = Regressor::new(variant, Architecture::default(), 42).unwrap();
            let w: Vec<f64> = noise(3, WINDOW_LEN, 0.1).iter().enumerate().map(|(i, v)| v + 0.002 * i as f64).collect();
            let fast = m.forward(&w).unwrap();
            let slow = reference_forward(&m, &w);
            assert!((fast - slow).abs() < 1e-9, "{variant}: {fast} vs {slow}");
        }
        let m = Regressor::new(Variant::Baseline, small_arch(), 5).unwrap();
        let w = noise(4, 24, 0.2);
        assert!((m.forward(&w).unwrap() - reference_forward(&m, &w)).abs() < 1e-12);
    }

    #[test]
    fn detrend_variant_ignores_affine_ramps() {
        let m = Regressor::new(Variant::Detrend, Architecture::default(), 2).unwrap();
        let w = noise(5, WINDOW_LEN, 0.1);
        let ramped: Vec<f64> = w.iter().enumerate().map(|(i, v)| v + 3.0 * i as f64 + 7.0).collect();
        assert!((m.forward(&w).unwrap() - m.forward(&ramped).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn forward_is_deterministic() {
        let m = Regressor::new(Variant::Baseline, Architecture::default(), 7).unwrap();
        let w = noise(6, WINDOW_LEN, 0.1);
        assert_eq!(m.forward(&w).unwrap().to_bits(), m.forward(&w).unwrap().to_bits());
        assert_eq!(m, Regressor::new(Variant::Baseline, Architecture::default(), 7).unwrap());
    }

    #[test]
    fn wrong_window_length_rejected() {
        let m = Regressor::new(Variant::Baseline, Architecture::default(), 7).unwrap();
        assert!(matches!(m.forward(&[0.0; 199]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn inference_is_clamped() {
        let m = Regressor::new(Variant::Detrend, Architecture::default(), 8).unwrap();
        let flat = [0.0; WINDOW_LEN];
        let loud = noise(9, WINDOW_LEN, 3.0);
        for w in [&flat[..], &loud[..]] {
            let (qf, qw) = m.infer_q(&[w; 6]).unwrap();
            for q in qf.iter().chain(qw.iter()) {
                assert!((Q_MIN..=Q_MAX).contains(q));
            }
        }
        // Force a negative output so constant windows hit the floor.
        let mut neg = m.clone();
        let last = neg.layout.linear[3];
        neg.params[last.weight.range()].fill(0.0);
        neg.params[last.bias.range()].fill(-1.0);
        let (qf, qw) = neg.infer_q(&[&flat[..]; 6]).unwrap();
        assert_eq!(qf, Vector3::repeat(Q_MIN));
        assert_eq!(qw, Vector3::repeat(Q_MIN));
    }
}
