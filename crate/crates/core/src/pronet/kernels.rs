//! Inner loops of the 1-D convolution.
//!
//! Each kernel has a portable version and an AVX2/FMA version selected at run
//! time. Both accumulate every output in the same order, so the only
//! difference between them is the rounding of fused multiply-adds.

/// Output positions per register block.
pub(crate) const BLOCK: usize = 16;

#[cfg(target_arch = "x86_64")]
fn fma_available() -> bool {
    static FMA: std::sync::OnceLock<bool> = std::sync::OnceLock::new();
    *FMA.get_or_init(|| is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma"))
}

/// Valid correlation of zero-padded rows:
/// `out[r, t] = bias[r] + Σ_c Σ_k weight[r, c, k] · x[c * stride + t + k]` for `t < out_len`.
///
/// Every `x` row must hold at least `ceil(out_len / BLOCK) · BLOCK + kernel - 1` values.
pub(crate) fn correlate(
    rows: usize,
    channels: usize,
    kernel: usize,
    weight: &[f64],
    bias: &[f64],
    x: &[f64],
    stride: usize,
    out_len: usize,
    out: &mut [f64],
) {
    let blocks = out_len.div_ceil(BLOCK);
    assert!(stride >= blocks * BLOCK + kernel - 1 && x.len() >= channels * stride);
    assert!(weight.len() >= rows * channels * kernel && bias.len() >= rows && out.len() >= rows * out_len);
    #[cfg(target_arch = "x86_64")]
    if fma_available() {
        // SAFETY: features detected above; the asserts bound every pointer offset.
        unsafe { avx::correlate(rows, channels, kernel, weight, bias, x, stride, out_len, out) };
        return;
    }
    for r in 0..rows {
        let w = &weight[r * channels * kernel..(r + 1) * channels * kernel];
        for b in 0..blocks {
            let t = b * BLOCK;
            let mut acc = [bias[r]; BLOCK];
            for c in 0..channels {
                let xc = &x[c * stride + t..c * stride + t + BLOCK + kernel - 1];
                for k in 0..kernel {
                    let wk = w[c * kernel + k];
                    for j in 0..BLOCK {
                        acc[j] += wk * xc[k + j];
                    }
                }
            }
            let n = BLOCK.min(out_len - t);
            out[r * out_len + t..r * out_len + t + n].copy_from_slice(&acc[..n]);
        }
    }
}

/// `gw[o, c, k] += Σ_{t < len} g[o * len + t] · x[c * x_len + t + k]`.
pub(crate) fn weight_grad(
    out_channels: usize,
    channels: usize,
    kernel: usize,
    g: &[f64],
    len: usize,
    x: &[f64],
    x_len: usize,
    gw: &mut [f64],
) {
    assert!(x_len + 1 >= len + kernel && x.len() >= channels * x_len && g.len() >= out_channels * len);
    assert!(gw.len() >= out_channels * channels * kernel);
    #[cfg(target_arch = "x86_64")]
    if fma_available() {
        // SAFETY: features detected above; the asserts bound every pointer offset.
        unsafe { avx::weight_grad(out_channels, channels, kernel, g, len, x, x_len, gw) };
        return;
    }
    for o in 0..out_channels {
        let go = &g[o * len..(o + 1) * len];
        for c in 0..channels {
            for k in 0..kernel {
                let xs = &x[c * x_len + k..c * x_len + k + len];
                gw[(o * channels + c) * kernel + k] += lane_dot(go, xs);
            }
        }
    }
}

/// Dot product in the lane order used by the vector kernel: eight partial sums
/// over `t mod 8`, combined pairwise, then the scalar tail.
fn lane_dot(a: &[f64], b: &[f64]) -> f64 {
    let chunks = a.len() / 8;
    let mut acc = [0.0; 8];
    for ch in 0..chunks {
        for j in 0..8 {
            acc[j] += a[ch * 8 + j] * b[ch * 8 + j];
        }
    }
    let mut tail = 0.0;
    for t in chunks * 8..a.len() {
        tail += a[t] * b[t];
    }
    combine(&acc) + tail
}

fn combine(acc: &[f64; 8]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

#[cfg(target_arch = "x86_64")]
mod avx {
    use super::{combine, BLOCK};
    use std::arch::x86_64::*;

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn correlate(
        rows: usize,
        channels: usize,
        kernel: usize,
        weight: &[f64],
        bias: &[f64],
        x: &[f64],
        stride: usize,
        out_len: usize,
        out: &mut [f64],
    ) {
        let blocks = out_len.div_ceil(BLOCK);
        let xp = x.as_ptr();
        let mut r = 0;
        // Two rows share each load of x; eight accumulators hide the FMA latency.
        while r < rows {
            let pair = r + 1 < rows;
            let r1 = if pair { r + 1 } else { r };
            let w0 = weight.as_ptr().add(r * channels * kernel);
            let w1 = weight.as_ptr().add(r1 * channels * kernel);
            for b in 0..blocks {
                let t = b * BLOCK;
                let (b0, b1) = (_mm256_set1_pd(bias[r]), _mm256_set1_pd(bias[r1]));
                let mut a = [b0, b0, b0, b0];
                let mut c = [b1, b1, b1, b1];
                for ch in 0..channels {
                    let base = xp.add(ch * stride + t);
                    for k in 0..kernel {
                        let p = base.add(k);
                        let u = _mm256_broadcast_sd(&*w0.add(ch * kernel + k));
                        let v = _mm256_broadcast_sd(&*w1.add(ch * kernel + k));
                        for l in 0..4 {
                            let xv = _mm256_loadu_pd(p.add(4 * l));
                            a[l] = _mm256_fmadd_pd(u, xv, a[l]);
                            c[l] = _mm256_fmadd_pd(v, xv, c[l]);
                        }
                    }
                }
                let n = BLOCK.min(out_len - t);
                let mut buf = [0.0; BLOCK];
                for l in 0..4 {
                    _mm256_storeu_pd(buf.as_mut_ptr().add(4 * l), a[l]);
                }
                out[r * out_len + t..r * out_len + t + n].copy_from_slice(&buf[..n]);
                if pair {
                    for l in 0..4 {
                        _mm256_storeu_pd(buf.as_mut_ptr().add(4 * l), c[l]);
                    }
                    out[r1 * out_len + t..r1 * out_len + t + n].copy_from_slice(&buf[..n]);
                }
            }
            r += 2;
        }
    }

    #[inline(always)]
    unsafe fn reduce(lo: __m256d, hi: __m256d) -> f64 {
        let mut buf = [0.0; 8];
        _mm256_storeu_pd(buf.as_mut_ptr(), lo);
        _mm256_storeu_pd(buf.as_mut_ptr().add(4), hi);
        combine(&buf)
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn weight_grad(
        out_channels: usize,
        channels: usize,
        kernel: usize,
        g: &[f64],
        len: usize,
        x: &[f64],
        x_len: usize,
        gw: &mut [f64],
    ) {
        const OB: usize = 4;
        let chunks = len / 8;
        let (gp, xp) = (g.as_ptr(), x.as_ptr());
        let mut o = 0;
        while o < out_channels {
            let rows = OB.min(out_channels - o);
            let row = |r: usize| gp.add((o + r.min(rows - 1)) * len);
            for c in 0..channels {
                for k in 0..kernel {
                    let xs = xp.add(c * x_len + k);
                    let mut lo = [_mm256_setzero_pd(); OB];
                    let mut hi = [_mm256_setzero_pd(); OB];
                    for ch in 0..chunks {
                        let x0 = _mm256_loadu_pd(xs.add(ch * 8));
                        let x1 = _mm256_loadu_pd(xs.add(ch * 8 + 4));
                        for rr in 0..OB {
                            let gr = row(rr).add(ch * 8);
                            lo[rr] = _mm256_fmadd_pd(_mm256_loadu_pd(gr), x0, lo[rr]);
                            hi[rr] = _mm256_fmadd_pd(_mm256_loadu_pd(gr.add(4)), x1, hi[rr]);
                        }
                    }
                    for rr in 0..rows {
                        let gr = row(rr);
                        let mut tail = 0.0;
                        for t in chunks * 8..len {
                            tail = (*gr.add(t)).mul_add(*xs.add(t), tail);
                        }
                        gw[((o + rr) * channels + c) * kernel + k] += reduce(lo[rr], hi[rr]) + tail;
                    }
                }
            }
            o += OB;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correlate_matches_direct_sum() {
        let (rows, channels, kernel, out_len): (usize, usize, usize, usize) = (3, 2, 4, 37);
        let stride = out_len.div_ceil(BLOCK) * BLOCK + kernel - 1;
        let x: Vec<f64> = (0..channels * stride).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let w: Vec<f64> = (0..rows * channels * kernel).map(|i| (i as f64 * 0.37).sin()).collect();
        let bias = [0.1, -0.2, 0.3];
        let mut out = vec![0.0; rows * out_len];
        correlate(rows, channels, kernel, &w, &bias, &x, stride, out_len, &mut out);
        for r in 0..rows {
            for t in 0..out_len {
                let mut e = bias[r];
                for c in 0..channels {
                    for k in 0..kernel {
                        e += w[(r * channels + c) * kernel + k] * x[c * stride + t + k];
                    }
                }
                assert!((out[r * out_len + t] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weight_grad_matches_direct_sum() {
        let (oc, channels, kernel, len) = (5, 3, 3, 29);
        let x_len = len + kernel - 1;
        let x: Vec<f64> = (0..channels * x_len).map(|i| (i as f64 * 0.11).cos()).collect();
        let g: Vec<f64> = (0..oc * len).map(|i| (i as f64 * 0.23).sin()).collect();
        let mut gw = vec![1.0; oc * channels * kernel];
        weight_grad(oc, channels, kernel, &g, len, &x, x_len, &mut gw);
        for o in 0..oc {
            for c in 0..channels {
                for k in 0..kernel {
                    let e: f64 = 1.0 + (0..len).map(|t| g[o * len + t] * x[c * x_len + t + k]).sum::<f64>();
                    assert!((gw[(o * channels + c) * kernel + k] - e).abs() < 1e-12);
                }
            }
        }
    }
}
