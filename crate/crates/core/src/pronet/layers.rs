//! Forward and backward kernels for the regressor's layer types.
//!
//! Feature maps are channel-major: element `(c, t)` of a `C × L` map lives at
//! `c * L + t`. Backward functions accumulate (`+=`) into parameter gradients
//! and overwrite input gradients.

use super::kernels::{correlate, weight_grad, BLOCK};

/// Slope of the negative branch of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Variance floor inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn leaky_relu(a: f64) -> f64 {
    if a > 0.0 {
        a
    } else {
        LEAKY_SLOPE * a
    }
}

pub fn leaky_relu_slope(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

pub fn leaky_relu_forward(pre: &[f64], out: &mut [f64]) {
    for (o, &a) in out.iter_mut().zip(pre) {
        *o = leaky_relu(a);
    }
}

/// `grad` holds dL/d(out) on entry and dL/d(pre) on exit.
pub fn leaky_relu_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(pre) {
        *g *= leaky_relu_slope(a);
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
/// The summation order is fixed, so results are reproducible.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn sum(a: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for j in 0..4 {
            acc[j] += a[c * 4 + j];
        }
    }
    let tail: f64 = a[chunks * 4..].iter().sum();
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Shape of a valid (unpadded, stride 1) 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub in_len: usize,
}

impl ConvShape {
    pub fn out_len(&self) -> usize {
        self.in_len + 1 - self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel
    }
}

/// Copies `channels` rows of `len` into zeroed rows of `stride`, `lead` values in.
fn padded(src: &[f64], channels: usize, len: usize, lead: usize, stride: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels * stride];
    for c in 0..channels {
        out[c * stride + lead..c * stride + lead + len].copy_from_slice(&src[c * len..(c + 1) * len]);
    }
    out
}

fn padded_stride(out_len: usize, kernel: usize) -> usize {
    out_len.div_ceil(BLOCK) * BLOCK + kernel - 1
}

/// `out[o, t] = bias[o] + Σ_i Σ_k weight[o, i, k] · input[i, t + k]`.
pub fn conv1d_forward(shape: &ConvShape, weight: &[f64], bias: &[f64], input: &[f64], out: &mut [f64]) {
    let (ic, k_len, l_in, l_out) = (shape.in_channels, shape.kernel, shape.in_len, shape.out_len());
    let stride = padded_stride(l_out, k_len);
    let x = padded(input, ic, l_in, 0, stride);
    correlate(shape.out_channels, ic, k_len, weight, bias, &x, stride, l_out, out);
}

/// Accumulates weight/bias gradients; writes dL/d(input) if requested.
pub fn conv1d_backward(
    shape: &ConvShape,
    weight: &[f64],
    input: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    grad_input: Option<&mut [f64]>,
) {
    let (ic, oc, k_len, l_in, l_out) =
        (shape.in_channels, shape.out_channels, shape.kernel, shape.in_len, shape.out_len());
    for o in 0..oc {
        grad_bias[o] += sum(&grad_out[o * l_out..(o + 1) * l_out]);
    }
    weight_grad(oc, ic, k_len, grad_out, l_out, input, l_in, grad_weight);
    if let Some(dx) = grad_input {
        // dx[i, s] = Σ_o Σ_k w[o, i, k] · g[o, s - k]: a valid correlation of the
        // zero-padded output gradient with the transposed, flipped kernel.
        let mut flipped = vec![0.0; weight.len()];
        for o in 0..oc {
            for i in 0..ic {
                for k in 0..k_len {
                    flipped[(i * oc + o) * k_len + k] = weight[(o * ic + i) * k_len + (k_len - 1 - k)];
                }
            }
        }
        let stride = padded_stride(l_in, k_len);
        let g = padded(grad_out, oc, l_out, k_len - 1, stride);
        correlate(ic, oc, k_len, &flipped, &vec![0.0; ic], &g, stride, l_in, dx);
    }
}

/// Normalizes a whole `channels × len` map to zero mean and unit variance,
/// then applies a per-channel gain and offset. Returns `1/σ` for the backward pass.
pub fn layer_norm_forward(
    channels: usize,
    len: usize,
    input: &[f64],
    gain: &[f64],
    offset: &[f64],
    normalized: &mut [f64],
    out: &mut [f64],
) -> f64 {
    let n = (channels * len) as f64;
    let mean = sum(input) / n;
    for (z, &x) in normalized.iter_mut().zip(input) {
        *z = x - mean;
    }
    let var = dot(normalized, normalized) / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for c in 0..channels {
        let range = c * len..(c + 1) * len;
        for (o, z) in out[range.clone()].iter_mut().zip(&mut normalized[range]) {
            *z *= inv_std;
            *o = gain[c] * *z + offset[c];
        }
    }
    inv_std
}

/// `grad` holds dL/d(out) on entry and dL/d(input) on exit.
pub fn layer_norm_backward(
    channels: usize,
    len: usize,
    normalized: &[f64],
    inv_std: f64,
    gain: &[f64],
    grad: &mut [f64],
    grad_gain: &mut [f64],
    grad_offset: &mut [f64],
) {
    let n = (channels * len) as f64;
    for c in 0..channels {
        let range = c * len..(c + 1) * len;
        grad_gain[c] += dot(&grad[range.clone()], &normalized[range.clone()]);
        grad_offset[c] += sum(&grad[range.clone()]);
        for g in &mut grad[range] {
            *g *= gain[c];
        }
    }
    let mean_g = sum(grad) / n;
    let mean_gz = dot(grad, normalized) / n;
    for (g, &z) in grad.iter_mut().zip(normalized) {
        *g = inv_std * (*g - mean_g - z * mean_gz);
    }
}

/// Per-channel mean over the time axis.
pub fn global_average_pool_forward(channels: usize, len: usize, input: &[f64], out: &mut [f64]) {
    for c in 0..channels {
        out[c] = sum(&input[c * len..(c + 1) * len]) / len as f64;
    }
}

pub fn global_average_pool_backward(channels: usize, len: usize, grad_out: &[f64], grad_input: &mut [f64]) {
    for c in 0..channels {
        grad_input[c * len..(c + 1) * len].fill(grad_out[c] / len as f64);
    }
}

/// `out[o] = bias[o] + Σ_i weight[o, i] · input[i]`.
pub fn linear_forward(inputs: usize, outputs: usize, weight: &[f64], bias: &[f64], input: &[f64], out: &mut [f64]) {
    for o in 0..outputs {
        out[o] = bias[o] + dot(&weight[o * inputs..(o + 1) * inputs], input);
    }
}

pub fn linear_backward(
    inputs: usize,
    outputs: usize,
    weight: &[f64],
    input: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    grad_input: Option<&mut [f64]>,
) {
    for o in 0..outputs {
        grad_bias[o] += grad_out[o];
        axpy(grad_out[o], input, &mut grad_weight[o * inputs..(o + 1) * inputs]);
    }
    if let Some(dx) = grad_input {
        dx.fill(0.0);
        for o in 0..outputs {
            axpy(grad_out[o], &weight[o * inputs..(o + 1) * inputs], dx);
        }
    }
}
