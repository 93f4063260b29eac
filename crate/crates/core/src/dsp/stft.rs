use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => hann(n),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Constant overlap-add sum of `w` at hop `hop`, if it exists.
fn cola_constant(w: &[f64], hop: usize) -> Option<f64> {
    let sums: Vec<f64> = (0..hop)
        .map(|n| w.iter().skip(n).step_by(hop).sum())
        .collect();
    let first = sums[0];
    let ok = first > 0.0 && sums.iter().all(|s| (s - first).abs() <= 1e-9 * first);
    ok.then_some(first)
}

/// One-sided short-time spectrum: `frames[t][k]` for `k in 0..=window_len/2`.
#[derive(Clone, Debug)]
pub struct Stft {
    pub frames: Vec<Vec<Complex64>>,
    pub window_len: usize,
    pub hop: usize,
    pub window: Window,
    pub signal_len: usize,
    pub sample_rate: u32,
}

impl Stft {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Σ over frames of the frame's spectral energy `Σ_k |X_k|² / N`,
    /// counting mirrored bins twice.
    pub fn energy(&self) -> f64 {
        let n = self.window_len;
        self.frames
            .iter()
            .map(|f| {
                f.iter()
                    .enumerate()
                    .map(|(k, x)| {
                        let mirrored = k != 0 && !(n % 2 == 0 && k == n / 2);
                        x.norm_sqr() * if mirrored { 2.0 } else { 1.0 }
                    })
                    .sum::<f64>()
                    / n as f64
            })
            .sum()
    }
}

/// Frames start at sample 0 and advance by `hop`; only full frames are kept.
pub fn stft(buf: &AudioBuffer, window_len: usize, hop: usize, window: Window) -> Result<Stft> {
    if window_len == 0 || hop == 0 || hop > window_len {
        return Err(Error::Config(format!(
            "stft needs 0 < hop ≤ window_len, got hop {hop}, window {window_len}"
        )));
    }
    let w = window.coefficients(window_len);
    if cola_constant(&w, hop).is_none() {
        return Err(Error::Config(format!(
            "{window:?} window of {window_len} is not COLA at hop {hop}"
        )));
    }
    let fft = FftPlanner::new().plan_fft_forward(window_len);
    let x = &buf.samples;
    let n_frames = if x.len() >= window_len { (x.len() - window_len) / hop + 1 } else { 0 };
    let mut frames = Vec::with_capacity(n_frames);
    let mut scratch = vec![Complex64::new(0.0, 0.0); window_len];
    for f in 0..n_frames {
        let start = f * hop;
        for (i, s) in scratch.iter_mut().enumerate() {
            *s = Complex64::new(x[start + i] * w[i], 0.0);
        }
        fft.process(&mut scratch);
        frames.push(scratch[..window_len / 2 + 1].to_vec());
    }
    Ok(Stft {
        frames,
        window_len,
        hop,
        window,
        signal_len: x.len(),
        sample_rate: buf.sample_rate,
    })
}

/// Overlap-add inverse. Samples covered by fewer than `window_len/hop`
/// frames (the edges) are not exact.
pub fn istft(spec: &Stft) -> Result<AudioBuffer> {
    let n = spec.window_len;
    let w = spec.window.coefficients(n);
    let c = cola_constant(&w, spec.hop).ok_or_else(|| {
        Error::Config(format!("window not COLA at hop {}", spec.hop))
    })?;
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut out = vec![0.0; spec.signal_len];
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    for (f, frame) in spec.frames.iter().enumerate() {
        for k in 0..n {
            full[k] = if k <= n / 2 { frame[k] } else { frame[n - k].conj() };
        }
        ifft.process(&mut full);
        let start = f * spec.hop;
        for i in 0..n {
            if start + i < out.len() {
                out[start + i] += full[i].re / n as f64 / c;
            }
        }
    }
    AudioBuffer::new(out, spec.sample_rate)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-style filterbank over FFT bins: `mel_bins` rows of
/// `n_fft/2 + 1` weights, row `m` peaking at the bin of its centre frequency.
pub fn mel_filterbank(n_fft: usize, sample_rate: u32, mel_bins: usize, fmin: f64, fmax: f64) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<usize> = (0..mel_bins + 2)
        .map(|i| {
            let hz = mel_to_hz(mlo + (mhi - mlo) * i as f64 / (mel_bins + 1) as f64);
            ((hz * n_fft as f64 / sample_rate as f64).round() as usize).min(n_bins - 1)
        })
        .collect();
    (0..mel_bins)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    if k == c {
                        1.0
                    } else if k > l && k < c {
                        (k - l) as f64 / (c - l) as f64
                    } else if k > c && k < r {
                        (r - k) as f64 / (r - c) as f64
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Log-mel energies.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    /// `frames[t][m]`, natural log of filtered power plus 1e-5.
    pub frames: Vec<Vec<f64>>,
    pub hop: usize,
    pub window: usize,
    pub sample_rate: u32,
    pub mel_bins: usize,
}

pub const MEL_LOG_FLOOR: f64 = 1e-5;

pub fn mel_spectrogram(
    buf: &AudioBuffer,
    window_len: usize,
    hop: usize,
    mel_bins: usize,
    fmin: f64,
    fmax: f64,
) -> Result<MelSpectrogram> {
    if fmax > buf.nyquist() || fmin < 0.0 || fmin >= fmax {
        return Err(Error::Config(format!(
            "mel range [{fmin}, {fmax}] Hz must sit inside [0, {}] Hz",
            buf.nyquist()
        )));
    }
    let fb = mel_filterbank(window_len, buf.sample_rate, mel_bins, fmin, fmax);
    let spec = stft(buf, window_len, hop, Window::Hann)?;
    let frames = spec
        .frames
        .iter()
        .map(|f| {
            fb.iter()
                .map(|row| {
                    let p: f64 = row.iter().zip(f).map(|(w, x)| w * x.norm_sqr()).sum();
                    (p + MEL_LOG_FLOOR).ln()
                })
                .collect()
        })
        .collect();
    Ok(MelSpectrogram {
        frames,
        hop,
        window: window_len,
        sample_rate: buf.sample_rate,
        mel_bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{make_probe, snr_db, ProbeKind};
    use crate::rng::Rng;

    #[test]
    fn dc_lands_in_bin_zero() {
        let x = AudioBuffer::new(vec![0.5; 1024], 16_000).unwrap();
        let s = stft(&x, 256, 64, Window::Hann).unwrap();
        for f in &s.frames {
            let total: f64 = f.iter().map(|c| c.norm_sqr()).sum();
            assert!(f[0].norm_sqr() / total > 0.6);
            assert!(f[3..].iter().all(|c| c.norm_sqr() < 1e-20));
        }
    }

    #[test]
    fn white_noise_roundtrip_snr() {
        let mut rng = Rng::new(5);
        let x: Vec<f64> = (0..8192).map(|_| rng.normal() * 0.3).collect();
        let buf = AudioBuffer::new(x.clone(), 16_000).unwrap();
        for &(n, h) in &[(512, 128), (256, 128), (1024, 256)] {
            let y = istft(&stft(&buf, n, h, Window::Hann).unwrap()).unwrap();
            let (lo, hi) = (n, 8192 - n);
            let snr = snr_db(&x[lo..hi], &y.samples[lo..hi], 300.0);
            assert!(snr > 60.0, "n={n} h={h}: {snr}");
        }
    }

    #[test]
    fn parseval_rectangular() {
        let mut rng = Rng::new(6);
        let x: Vec<f64> = (0..4096).map(|_| rng.normal()).collect();
        let buf = AudioBuffer::new(x.clone(), 16_000).unwrap();
        let s = stft(&buf, 512, 512, Window::Rectangular).unwrap();
        let e: f64 = x.iter().map(|v| v * v).sum();
        assert!((s.energy() - e).abs() / e < 1e-6);
    }

    #[test]
    fn non_cola_rejected() {
        let buf = AudioBuffer::silence(2048, 16_000);
        assert!(matches!(stft(&buf, 512, 300, Window::Hann), Err(Error::Config(_))));
        assert!(matches!(stft(&buf, 512, 300, Window::Rectangular), Err(Error::Config(_))));
    }

    #[test]
    fn silence_mel_is_floor() {
        let buf = AudioBuffer::silence(4000, 24_000);
        let m = mel_spectrogram(&buf, 512, 128, 40, 0.0, 12_000.0).unwrap();
        assert!(!m.frames.is_empty());
        for f in &m.frames {
            for &v in f {
                assert_eq!(v, MEL_LOG_FLOOR.ln());
            }
        }
    }

    #[test]
    fn filterbank_triangles() {
        let fb = mel_filterbank(1024, 24_000, 40, 0.0, 12_000.0);
        for (m, row) in fb.iter().enumerate() {
            assert!(row.iter().all(|&w| w >= 0.0));
            let centre = mel_to_hz(hz_to_mel(12_000.0) * (m + 1) as f64 / 41.0);
            let cbin = (centre * 1024.0 / 24_000.0).round() as usize;
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, cbin, "row {m}");
        }
    }

    #[test]
    fn tone_hits_nearest_mel_bin() {
        let buf = make_probe(&ProbeKind::Sine { freq_hz: 1000.0, amplitude: 0.5 }, 0.5, 24_000, 0).unwrap();
        let (bins, fmax) = (40, 12_000.0);
        let m = mel_spectrogram(&buf, 1024, 256, bins, 0.0, fmax).unwrap();
        let avg: Vec<f64> = (0..bins)
            .map(|b| m.frames.iter().map(|f| f[b]).sum::<f64>() / m.frames.len() as f64)
            .collect();
        let got = (0..bins).max_by(|&a, &b| avg[a].total_cmp(&avg[b])).unwrap();
        let want = (0..bins)
            .min_by(|&a, &b| {
                let ca = mel_to_hz(hz_to_mel(fmax) * (a + 1) as f64 / (bins + 1) as f64);
                let cb = mel_to_hz(hz_to_mel(fmax) * (b + 1) as f64 / (bins + 1) as f64);
                (ca - 1000.0).abs().total_cmp(&(cb - 1000.0).abs())
            })
            .unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn fmax_above_nyquist_rejected() {
        let buf = AudioBuffer::silence(4000, 16_000);
        assert!(mel_spectrogram(&buf, 512, 128, 40, 0.0, 9000.0).is_err());
    }
}
