use super::fft::rfft_full;
use super::{hann, AudioBuffer, BandSpec};
use crate::error::{Error, Result};

/// Largest lag, in samples, searched when aligning a system's output.
pub const DEFAULT_MAX_LAG: usize = 1024;

/// Energy of the Hann-windowed full-signal spectrum inside the band,
/// both mirror halves included.
pub fn band_energy(buf: &AudioBuffer, band: BandSpec) -> Result<f64> {
    band.validate(buf.sample_rate)?;
    let n = buf.len();
    if n == 0 {
        return Ok(0.0);
    }
    let w = hann(n);
    let x: Vec<f64> = buf.samples.iter().zip(&w).map(|(s, w)| s * w).collect();
    let spec = rfft_full(&x, n);
    let sr = buf.sample_rate as f64;
    let (lo, hi) = (band.lo(), band.hi());
    let mut e = 0.0;
    for (k, c) in spec.iter().enumerate() {
        // bin k and bin n−k share |f|
        let f = k.min(n - k) as f64 * sr / n as f64;
        if f >= lo && f <= hi {
            e += c.norm_sqr();
        }
    }
    Ok(e)
}

/// Lag `τ ∈ [−max_lag, max_lag]` maximizing `Σ x[n]·y[n+τ]`, and the two
/// signals cut to their overlap under that lag.
pub fn align_by_xcorr(x: &[f64], y: &[f64], max_lag: usize) -> (isize, Vec<f64>, Vec<f64>) {
    if x.is_empty() || y.is_empty() {
        return (0, vec![], vec![]);
    }
    let n = (x.len() + y.len()).next_power_of_two();
    let fx = rfft_full(x, n);
    let fy = rfft_full(y, n);
    let prod: Vec<_> = fx.iter().zip(&fy).map(|(a, b)| a.conj() * b).collect();
    let mut buf = prod;
    rustfft::FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    // buf[τ mod n] = Σ x[m]·y[m+τ]
    let max_lag = max_lag as isize;
    let mut best = (0isize, f64::NEG_INFINITY);
    for lag in -max_lag..=max_lag {
        if lag >= y.len() as isize || -lag >= x.len() as isize {
            continue;
        }
        let v = buf[lag.rem_euclid(n as isize) as usize].re;
        // ties go to the smallest |lag|
        let better = best.1 == f64::NEG_INFINITY
            || v > best.1 + 1e-12 * best.1.abs()
            || (v >= best.1 - 1e-12 * best.1.abs() && lag.abs() < best.0.abs());
        if better {
            best = (lag, v);
        }
    }
    let lag = best.0;
    let (xs, ys) = if lag >= 0 {
        (&x[..], &y[lag as usize..])
    } else {
        (&x[(-lag) as usize..], &y[..])
    };
    let m = xs.len().min(ys.len());
    (lag, xs[..m].to_vec(), ys[..m].to_vec())
}

/// Band-energy ratio of already aligned, equal-length signals.
pub fn retention_aligned(input: &AudioBuffer, output: &AudioBuffer, band: BandSpec) -> Result<f64> {
    let ein = band_energy(input, band)?;
    if ein <= 0.0 {
        return Err(Error::UndefinedRetention {
            center_hz: band.center_hz,
            half_width_hz: band.half_width_hz,
        });
    }
    Ok(band_energy(output, band)? / ein)
}

/// Output/input band-energy ratio after cross-correlation lag alignment.
/// Not clamped: an amplifying system reports values above one.
pub fn retention(input: &AudioBuffer, output: &AudioBuffer, band: BandSpec) -> Result<f64> {
    if input.sample_rate != output.sample_rate {
        return Err(Error::Config(format!(
            "retention needs equal rates, got {} and {}",
            input.sample_rate, output.sample_rate
        )));
    }
    let (_, xs, ys) = align_by_xcorr(&input.samples, &output.samples, DEFAULT_MAX_LAG);
    let a = AudioBuffer { samples: xs, sample_rate: input.sample_rate };
    let b = AudioBuffer { samples: ys, sample_rate: input.sample_rate };
    retention_aligned(&a, &b, band)
}
