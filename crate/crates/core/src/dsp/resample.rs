use super::filter::{kaiser, kaiser_beta, sinc, DESIGN_ATTENUATION_DB};
use super::AudioBuffer;
use crate::error::{Error, Result};

/// Number of sinc zero crossings on each side of the kernel centre.
const ZERO_CROSSINGS: f64 = 32.0;
/// Passband edge as a fraction of the lower of the two Nyquist rates.
const ROLLOFF: f64 = 0.9;
/// Above this many phases the kernel is evaluated per output sample.
const MAX_TABLE_PHASES: u64 = 4096;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Rational-ratio Kaiser-windowed sinc resampler.
///
/// Output sample `j` sits at input position `j·M/L` with `L/M` the reduced
/// ratio, so its fractional offset is one of `L` phases; those kernels are
/// tabulated once. Output length is `round(len·target/source)`.
pub fn resample(buf: &AudioBuffer, target_hz: u32) -> Result<AudioBuffer> {
    if target_hz == 0 {
        return Err(Error::Config("target sample rate must be positive".into()));
    }
    let src = buf.sample_rate as u64;
    if src == target_hz as u64 {
        return Ok(buf.clone());
    }
    let g = gcd(src, target_hz as u64);
    let (up, down) = (target_hz as u64 / g, src / g);
    let n_out = ((buf.len() as u128 * target_hz as u128 + src as u128 / 2) / src as u128) as usize;

    // cutoff in cycles per input sample
    let fc = 0.5 * ROLLOFF * (target_hz as f64 / src as f64).min(1.0);
    let half = (ZERO_CROSSINGS / (2.0 * fc)).ceil() as isize;
    let beta = kaiser_beta(DESIGN_ATTENUATION_DB);
    let kernel = |tau: f64| 2.0 * fc * sinc(2.0 * fc * tau) * kaiser(tau / half as f64, beta);
    let taps_per_phase = (2 * half) as usize;

    let table: Option<Vec<Vec<f64>>> = (up <= MAX_TABLE_PHASES).then(|| {
        (0..up)
            .map(|ph| {
                let frac = ph as f64 / up as f64;
                (0..taps_per_phase)
                    .map(|i| kernel(frac - (i as isize - half + 1) as f64))
                    .collect()
            })
            .collect()
    });

    let x = &buf.samples;
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out as u64 {
        let num = j * down;
        let n0 = (num / up) as isize;
        let ph = num % up;
        let mut acc = 0.0;
        for i in 0..taps_per_phase {
            let idx = n0 + i as isize - half + 1;
            if idx < 0 || idx as usize >= x.len() {
                continue;
            }
            let h = match &table {
                Some(t) => t[ph as usize][i],
                None => kernel(ph as f64 / up as f64 - (i as isize - half + 1) as f64),
            };
            acc += h * x[idx as usize];
        }
        out.push(acc);
    }
    AudioBuffer::new(out, target_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{band_energy, db, make_probe, BandSpec, ProbeKind};
    use crate::dsp::fft::{bin_hz, peak_bin};

    fn tone(f: f64, sr: u32, dur: f64) -> AudioBuffer {
        make_probe(&ProbeKind::Sine { freq_hz: f, amplitude: 0.5 }, dur, sr, 0).unwrap()
    }

    #[test]
    fn same_rate_is_identity() {
        let x = tone(300.0, 16_000, 0.1);
        assert_eq!(resample(&x, 16_000).unwrap(), x);
    }

    #[test]
    fn output_length_rounds() {
        let x = AudioBuffer::silence(1001, 48_000);
        assert_eq!(resample(&x, 24_000).unwrap().len(), 501);
        assert_eq!(resample(&x, 44_100).unwrap().len(), 920);
        assert_eq!(resample(&AudioBuffer::silence(0, 48_000), 24_000).unwrap().len(), 0);
    }

    #[test]
    fn downsampled_tone_keeps_frequency_and_energy() {
        let x = tone(1000.0, 48_000, 1.0);
        let y = resample(&x, 24_000).unwrap();
        let k = peak_bin(&y.samples);
        assert!((bin_hz(k, y.len(), 24_000.0) - 1000.0).abs() <= 24_000.0 / y.len() as f64);
        let band = BandSpec::new(1000.0, 500.0);
        // per-sample energy so the rate change does not matter
        let ex = band_energy(&x, band).unwrap() / (x.len() as f64).powi(2);
        let ey = band_energy(&y, band).unwrap() / (y.len() as f64).powi(2);
        assert!((ey / ex - 1.0).abs() < 0.01, "{}", ey / ex);
    }

    #[test]
    fn tone_above_new_nyquist_is_removed() {
        let x = tone(10_000.0, 48_000, 0.5);
        let y = resample(&x, 16_000).unwrap();
        let m = y.len() / 4;
        let interior: f64 = y.samples[m..y.len() - m].iter().map(|v| v * v).sum::<f64>() / (y.len() - 2 * m) as f64;
        let input: f64 = x.energy() / x.len() as f64;
        assert!(db(input, interior) > 40.0, "{}", db(input, interior));
    }

    #[test]
    fn upsampling_preserves_tone() {
        let x = tone(3000.0, 24_000, 0.5);
        let y = resample(&x, 36_000).unwrap();
        let k = peak_bin(&y.samples);
        assert!((bin_hz(k, y.len(), 36_000.0) - 3000.0).abs() <= 2.0);
    }
}
