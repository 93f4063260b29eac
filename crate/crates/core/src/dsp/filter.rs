use super::AudioBuffer;
use crate::error::{Error, Result};

/// Stopband attenuation targeted by every FIR design here, in dB.
pub const DESIGN_ATTENUATION_DB: f64 = 80.0;

/// Kaiser β for a given stopband attenuation.
pub fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

/// Zeroth-order modified Bessel function of the first kind.
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser window value at normalized position `u ∈ [−1, 1]`.
pub(crate) fn kaiser(u: f64, beta: f64) -> f64 {
    if u.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - u * u).sqrt()) / bessel_i0(beta)
}

pub(crate) fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Odd-length linear-phase lowpass taps with unit DC gain.
///
/// The −6 dB point sits at `cutoff_hz`; the transition band is
/// `transition_hz` wide and centred on it.
pub fn lowpass_taps(cutoff_hz: f64, transition_hz: f64, sample_rate: f64) -> Vec<f64> {
    let df = transition_hz / sample_rate;
    let n = ((DESIGN_ATTENUATION_DB - 7.95) / (14.36 * df)).ceil() as usize;
    let n = n | 1;
    let half = (n / 2) as f64;
    let fc = cutoff_hz / sample_rate;
    let beta = kaiser_beta(DESIGN_ATTENUATION_DB);
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let m = i as f64 - half;
            2.0 * fc * sinc(2.0 * fc * m) * kaiser(if half > 0.0 { m / half } else { 0.0 }, beta)
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Zero-phase FIR lowpass, same length in and out.
///
/// Transition width is `min(0.2·cutoff, nyquist − cutoff)`, so everything
/// above `cutoff + width/2` is in the stopband.
pub fn lowpass(buf: &AudioBuffer, cutoff_hz: f64) -> Result<AudioBuffer> {
    let nyq = buf.nyquist();
    if !(cutoff_hz > 0.0 && cutoff_hz < nyq) {
        return Err(Error::Config(format!(
            "lowpass cutoff {cutoff_hz} Hz must lie in (0, {nyq}) Hz"
        )));
    }
    let tw = (0.2 * cutoff_hz).min(nyq - cutoff_hz);
    let taps = lowpass_taps(cutoff_hz, tw, buf.sample_rate as f64);
    Ok(AudioBuffer {
        samples: convolve_same(&buf.samples, &taps),
        sample_rate: buf.sample_rate,
    })
}

/// Centred convolution with an odd-length kernel; zero outside the signal.
pub(crate) fn convolve_same(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let half = taps.len() / 2;
    let n = x.len();
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (j, &t) in taps.iter().enumerate() {
                let idx = i as isize + half as isize - j as isize;
                if idx >= 0 && (idx as usize) < n {
                    acc += t * x[idx as usize];
                }
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{db, make_probe, ProbeKind};

    fn tone(f: f64, sr: u32) -> AudioBuffer {
        make_probe(&ProbeKind::Sine { freq_hz: f, amplitude: 0.5 }, 0.5, sr, 0).unwrap()
    }

    // energy over the interior, away from the filter's edge transients
    fn interior_energy(x: &[f64]) -> f64 {
        let m = x.len() / 4;
        x[m..x.len() - m].iter().map(|v| v * v).sum()
    }

    #[test]
    fn passband_tone_preserved() {
        let x = tone(1000.0, 24_000);
        let y = lowpass(&x, 4000.0).unwrap();
        let r = interior_energy(&y.samples) / interior_energy(&x.samples);
        assert!((r - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn tone_at_twice_cutoff_rejected() {
        let x = tone(8000.0, 24_000);
        let y = lowpass(&x, 4000.0).unwrap();
        let att = db(interior_energy(&x.samples), interior_energy(&y.samples));
        assert!(att > 40.0, "{att}");
    }

    #[test]
    fn stopband_reaches_sixty_db() {
        let x = tone(5200.0, 24_000);
        let y = lowpass(&x, 4000.0).unwrap();
        let att = db(interior_energy(&x.samples), interior_energy(&y.samples));
        assert!(att >= 60.0, "{att}");
    }

    #[test]
    fn dc_preserved() {
        let x = AudioBuffer::new(vec![0.3; 4000], 24_000).unwrap();
        let y = lowpass(&x, 2000.0).unwrap();
        assert!((y.samples[2000] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn cutoff_at_nyquist_rejected() {
        let x = AudioBuffer::silence(10, 24_000);
        assert!(matches!(lowpass(&x, 12_000.0), Err(Error::Config(_))));
    }
}
