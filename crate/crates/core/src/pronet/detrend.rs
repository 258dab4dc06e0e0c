use crate::error::{invalid, Result};

/// Removes the least-squares straight line from `s`.
///
/// The result has zero mean and zero regression slope against the sample index.
pub fn detrend(s: &[f64]) -> Result<Vec<f64>> {
    let n = s.len();
    if n < 2 {
        return Err(invalid(format!("detrend needs at least two samples, got {n}")));
    }
    let mut out = s.to_vec();
    detrend_in_place(&mut out);
    Ok(out)
}

pub(crate) fn detrend_in_place(s: &mut [f64]) {
    let n = s.len() as f64;
    let index_mean = (n - 1.0) / 2.0;
    let mean = s.iter().sum::<f64>() / n;
    // Σ (i - ī)² = n (n² - 1) / 12
    let index_ss = n * (n * n - 1.0) / 12.0;
    let cov: f64 = s.iter().enumerate().map(|(i, v)| (i as f64 - index_mean) * (v - mean)).sum();
    let slope = cov / index_ss;
    for (i, v) in s.iter_mut().enumerate() {
        *v -= mean + slope * (i as f64 - index_mean);
    }
}
