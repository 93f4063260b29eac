use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::AudioBuffer;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Probe peak level after normalization; matches the synthetic corpus.
pub const PROBE_PEAK: f64 = 0.5;

/// Deterministic test signals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeKind {
    Sine { freq_hz: f64, amplitude: f64 },
    /// Equal-amplitude sum with seeded phases, peak-normalized.
    Multitone { freqs_hz: Vec<f64> },
    /// Linear sweep from `f0_hz` to `f1_hz` at amplitude 0.5.
    Chirp { f0_hz: f64, f1_hz: f64 },
    /// Harmonics of `f0_hz` up to `max_hz`, amplitude falling by
    /// `tilt_db_per_octave` per octave, seeded phases, peak-normalized.
    HarmonicTone { f0_hz: f64, max_hz: f64, tilt_db_per_octave: f64 },
}

impl ProbeKind {
    fn max_freq(&self) -> f64 {
        match self {
            ProbeKind::Sine { freq_hz, .. } => *freq_hz,
            ProbeKind::Multitone { freqs_hz } => freqs_hz.iter().copied().fold(0.0, f64::max),
            ProbeKind::Chirp { f0_hz, f1_hz } => f0_hz.max(*f1_hz),
            ProbeKind::HarmonicTone { max_hz, .. } => *max_hz,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ProbeKind::Sine { freq_hz, .. } => format!("sine {freq_hz} Hz"),
            ProbeKind::Multitone { freqs_hz } => format!(
                "multitone {}",
                freqs_hz.iter().map(|f| format!("{f}")).collect::<Vec<_>>().join("+")
            ),
            ProbeKind::Chirp { f0_hz, f1_hz } => format!("chirp {f0_hz}-{f1_hz} Hz"),
            ProbeKind::HarmonicTone { f0_hz, max_hz, tilt_db_per_octave } => {
                format!("harmonic f0={f0_hz} max={max_hz} tilt={tilt_db_per_octave}dB/oct")
            }
        }
    }
}

fn peak_normalize(x: &mut [f64]) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= PROBE_PEAK / peak);
    }
}

fn sum_of_sines(comps: &[(f64, f64)], n: usize, sr: f64, rng: &mut Rng) -> Vec<f64> {
    let phases: Vec<f64> = comps.iter().map(|_| 2.0 * PI * rng.uniform()).collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            comps
                .iter()
                .zip(&phases)
                .map(|(&(f, a), &p)| a * (2.0 * PI * f * t + p).sin())
                .sum()
        })
        .collect()
}

/// Synthesizes `duration_s` seconds of `kind` at `sample_rate`.
pub fn make_probe(kind: &ProbeKind, duration_s: f64, sample_rate: u32, seed: u64) -> Result<AudioBuffer> {
    let nyq = sample_rate as f64 / 2.0;
    if kind.max_freq() > nyq {
        return Err(Error::Config(format!(
            "probe frequency {} Hz above Nyquist {nyq} Hz",
            kind.max_freq()
        )));
    }
    let n = (duration_s * sample_rate as f64).round().max(0.0) as usize;
    let sr = sample_rate as f64;
    let mut rng = Rng::derive(seed, "probe");
    let samples = match kind {
        ProbeKind::Sine { freq_hz, amplitude } => (0..n)
            .map(|i| amplitude * (2.0 * PI * freq_hz * i as f64 / sr).sin())
            .collect(),
        ProbeKind::Multitone { freqs_hz } => {
            let comps: Vec<(f64, f64)> = freqs_hz.iter().map(|&f| (f, 1.0)).collect();
            let mut x = sum_of_sines(&comps, n, sr, &mut rng);
            peak_normalize(&mut x);
            x
        }
        ProbeKind::Chirp { f0_hz, f1_hz } => {
            let dur = n as f64 / sr;
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    let k = if dur > 0.0 { (f1_hz - f0_hz) / dur } else { 0.0 };
                    0.5 * (2.0 * PI * (f0_hz * t + 0.5 * k * t * t)).sin()
                })
                .collect()
        }
        ProbeKind::HarmonicTone { f0_hz, max_hz, tilt_db_per_octave } => {
            let comps: Vec<(f64, f64)> = (1..)
                .map(|h| h as f64 * f0_hz)
                .take_while(|&f| f <= *max_hz)
                .map(|f| (f, 10f64.powf(-tilt_db_per_octave * (f / f0_hz).log2() / 20.0)))
                .collect();
            let mut x = sum_of_sines(&comps, n, sr, &mut rng);
            peak_normalize(&mut x);
            x
        }
    };
    AudioBuffer::new(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::fft::{bin_hz, peak_bin, rfft_full};

    #[test]
    fn sine_peak() {
        let b = make_probe(&ProbeKind::Sine { freq_hz: 2000.0, amplitude: 0.5 }, 0.25, 24_000, 0).unwrap();
        let k = peak_bin(&b.samples);
        assert_eq!(bin_hz(k, b.len(), 24_000.0), 2000.0);
    }

    #[test]
    fn multitone_equal_peaks() {
        let kind = ProbeKind::Multitone { freqs_hz: vec![2000.0, 5000.0, 8000.0] };
        let b = make_probe(&kind, 0.5, 24_000, 3).unwrap();
        let peak = b.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - PROBE_PEAK).abs() < 1e-12);
        let spec = rfft_full(&b.samples, b.len());
        // 0.5 s → 2 Hz bins, all three tones are bin-centred
        let mags: Vec<f64> = [1000, 2500, 4000].iter().map(|&k| spec[k].norm()).collect();
        let mean = mags.iter().sum::<f64>() / 3.0;
        for m in mags {
            assert!((m / mean - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn zero_duration_is_empty() {
        let b = make_probe(&ProbeKind::Chirp { f0_hz: 100.0, f1_hz: 200.0 }, 0.0, 8000, 0).unwrap();
        assert!(b.is_empty());
    }

    #[test]
    fn above_nyquist_rejected() {
        let kind = ProbeKind::Multitone { freqs_hz: vec![1000.0, 9000.0] };
        assert!(matches!(make_probe(&kind, 0.1, 16_000, 0), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let kind = ProbeKind::HarmonicTone { f0_hz: 220.0, max_hz: 9000.0, tilt_db_per_octave: 3.0 };
        assert_eq!(make_probe(&kind, 0.1, 24_000, 7).unwrap(), make_probe(&kind, 0.1, 24_000, 7).unwrap());
        assert_ne!(make_probe(&kind, 0.1, 24_000, 7).unwrap(), make_probe(&kind, 0.1, 24_000, 8).unwrap());
    }
}
