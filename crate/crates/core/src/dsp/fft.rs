//! Thin helpers over `rustfft`.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Forward DFT of a real signal, zero-padded (or truncated) to `n` points.
pub fn rfft_full(x: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf
}

/// Bin frequency in Hz for bin `k` of an `n`-point transform.
pub fn bin_hz(k: usize, n: usize, sample_rate: f64) -> f64 {
    k as f64 * sample_rate / n as f64
}

/// Index of the largest-magnitude bin in `0..=n/2`.
pub fn peak_bin(x: &[f64]) -> usize {
    let spec = rfft_full(x, x.len());
    (0..=x.len() / 2)
        .max_by(|&a, &b| spec[a].norm_sqr().total_cmp(&spec[b].norm_sqr()))
        .unwrap_or(0)
}
