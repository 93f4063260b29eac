//! Reconstruction loss: time-domain L1 plus multi-resolution log-magnitude
//! STFT L1.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::dsp::{hann, AudioBuffer};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// STFT window lengths; each uses hop = window / 4.
pub const SIM_WINDOWS: [usize; 3] = [256, 512, 1024];
/// Added to magnitudes before the log.
pub const SIM_LOG_EPS: f64 = 1e-3;
/// Largest length difference that is silently trimmed.
pub const SIM_LENGTH_TOLERANCE: usize = 512;

struct Frames {
    n: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Frames {
    fn new(n: usize) -> Self {
        Self {
            n,
            hop: n / 4,
            window: hann(n),
            fft: FftPlanner::new().plan_fft_forward(n),
        }
    }

    fn count(&self, len: usize) -> usize {
        if len < self.n {
            0
        } else {
            (len - self.n) / self.hop + 1
        }
    }

    fn spectrum(&self, x: &[f64], frame: usize) -> Vec<Complex64> {
        let start = frame * self.hop;
        let mut buf: Vec<Complex64> = x[start..start + self.n]
            .iter()
            .zip(&self.window)
            .map(|(s, w)| Complex64::new(s * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        buf.truncate(self.n / 2 + 1);
        buf
    }
}

/// `log(|STFT(x)| + ε)` as a `frames × (n/2+1)` matrix.
pub fn log_magnitude(x: &[f64], n: usize) -> Tensor {
    let fr = Frames::new(n);
    let frames = fr.count(x.len());
    let bins = n / 2 + 1;
    let mut out = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        out.extend(fr.spectrum(x, f).iter().map(|c| (c.norm() + SIM_LOG_EPS).ln()));
    }
    Tensor::new(vec![frames, bins], out).expect("sized")
}

impl Tape {
    /// Differentiable [`log_magnitude`] of a `1 × N` (or length-`N`) signal.
    pub fn stft_log_magnitude(&mut self, x: Var, n: usize) -> Result<Var> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Config(format!("stft window {n} must be a power of two ≥ 4")));
        }
        let signal = self.value(x).data().to_vec();
        let len = signal.len();
        let fr = Frames::new(n);
        let frames = fr.count(len);
        let bins = n / 2 + 1;
        let mut spectra = Vec::with_capacity(frames);
        let mut out = Vec::with_capacity(frames * bins);
        for f in 0..frames {
            let s = fr.spectrum(&signal, f);
            out.extend(s.iter().map(|c| (c.norm() + SIM_LOG_EPS).ln()));
            spectra.push(s);
        }
        let value = Tensor::new(vec![frames, bins], out)?;
        Ok(self.custom(
            value,
            vec![x],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; len];
                let mut buf = vec![Complex64::new(0.0, 0.0); fr.n];
                for (f, spec) in spectra.iter().enumerate() {
                    buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
                    for (k, xk) in spec.iter().enumerate() {
                        let mag = xk.norm();
                        if mag > 0.0 {
                            buf[k] = xk.conj() * (g[f * bins + k] / (mag * (mag + SIM_LOG_EPS)));
                        }
                    }
                    fr.fft.process(&mut buf);
                    let start = f * fr.hop;
                    for (i, (c, w)) in buf.iter().zip(&fr.window).enumerate() {
                        gx[start + i] += w * c.re;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

fn aligned_len(a: usize, b: usize) -> Result<usize> {
    if a.abs_diff(b) > SIM_LENGTH_TOLERANCE {
        return Err(Error::shape(
            "sim_loss",
            format!("lengths {a} and {b} differ by more than {SIM_LENGTH_TOLERANCE}"),
        ));
    }
    Ok(a.min(b))
}

/// Per-term breakdown of the reconstruction loss.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTerms {
    pub time_l1: f64,
    /// One entry per window in [`SIM_WINDOWS`]; zero when the signal is
    /// shorter than the window.
    pub spectral_l1: Vec<f64>,
}

impl SimTerms {
    pub fn total(&self) -> f64 {
        self.time_l1 + self.spectral_l1.iter().sum::<f64>()
    }
}

/// Differentiable loss between a fixed target and an estimate `1 × M`.
///
/// Both are trimmed to the shorter length. Resolutions whose window exceeds
/// that length contribute nothing.
pub fn sim_loss_graph(tape: &mut Tape, target: &AudioBuffer, estimate: Var) -> Result<(Var, SimTerms)> {
    let m = tape.value(estimate).numel();
    let len = aligned_len(target.len(), m)?;
    if len == 0 {
        return Err(Error::shape("sim_loss", "empty signals"));
    }
    let est = if m == len {
        tape.reshape(estimate, &[1, len])?
    } else {
        let e = tape.reshape(estimate, &[1, m])?;
        tape.slice_cols(e, 0, len)?
    };
    let tgt = tape.constant(Tensor::matrix(1, len, target.samples[..len].to_vec())?);
    let mut total = tape.l1(est, tgt)?;
    let mut terms = SimTerms {
        time_l1: tape.value(total).item(),
        spectral_l1: Vec::with_capacity(SIM_WINDOWS.len()),
    };
    for &n in &SIM_WINDOWS {
        if len < n {
            terms.spectral_l1.push(0.0);
            continue;
        }
        let lm_t = tape.constant(log_magnitude(&target.samples[..len], n));
        let lm_e = tape.stft_log_magnitude(est, n)?;
        let term = tape.l1(lm_e, lm_t)?;
        terms.spectral_l1.push(tape.value(term).item());
        total = tape.add(total, term)?;
    }
    Ok((total, terms))
}

/// Value of the reconstruction loss; lower means more similar.
pub fn sim_loss(a: &AudioBuffer, a_hat: &AudioBuffer) -> Result<f64> {
    if a.sample_rate != a_hat.sample_rate {
        return Err(Error::Config(format!(
            "sim_loss needs equal rates, got {} and {}",
            a.sample_rate, a_hat.sample_rate
        )));
    }
    let mut tape = Tape::new();
    let e = tape.constant(Tensor::vector(a_hat.samples.clone()));
    let (l, _) = sim_loss_graph(&mut tape, a, e)?;
    Ok(tape.value(l).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn noise(n: usize, seed: u64) -> AudioBuffer {
        let mut rng = Rng::new(seed);
        AudioBuffer::new((0..n).map(|_| rng.normal() * 0.3).collect(), 24_000).unwrap()
    }

    /// Direct O(N²) DFT evaluation of the same definition.
    fn naive(a: &[f64], b: &[f64]) -> f64 {
        let len = a.len().min(b.len());
        let mut total = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / len as f64;
        for &n in &SIM_WINDOWS {
            if len < n {
                continue;
            }
            let hop = n / 4;
            let w: Vec<f64> = (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect();
            let frames = (len - n) / hop + 1;
            let mut acc = 0.0;
            for f in 0..frames {
                for k in 0..=n / 2 {
                    let mag = |x: &[f64]| {
                        let (mut re, mut im) = (0.0, 0.0);
                        for i in 0..n {
                            let ph = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                            let v = x[f * hop + i] * w[i];
                            re += v * ph.cos();
                            im += v * ph.sin();
                        }
                        (re * re + im * im).sqrt()
                    };
                    acc += ((mag(a) + SIM_LOG_EPS).ln() - (mag(b) + SIM_LOG_EPS).ln()).abs();
                }
            }
            total += acc / (frames * (n / 2 + 1)) as f64;
        }
        total
    }

    #[test]
    fn identical_signals_score_zero() {
        let x = noise(3000, 1);
        assert_eq!(sim_loss(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn more_distortion_scores_higher() {
        let mut rng = Rng::new(2);
        let raw: Vec<f64> = (0..4096).map(|_| rng.normal()).collect();
        let e = (raw.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let x = AudioBuffer::new(raw.iter().map(|v| v / e).collect(), 24_000).unwrap();
        let zero = AudioBuffer::silence(4096, 24_000);
        assert!(sim_loss(&x, &zero).unwrap() > sim_loss(&x, &x.scaled(0.9)).unwrap());
    }

    #[test]
    fn matches_direct_evaluation() {
        let a = noise(1300, 3);
        let b = noise(1300, 4);
        let fast = sim_loss(&a, &b).unwrap();
        let slow = naive(&a.samples, &b.samples);
        assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
    }

    #[test]
    fn symmetric() {
        let a = noise(2000, 5);
        let b = noise(2000, 6);
        let d = sim_loss(&a, &b).unwrap() - sim_loss(&b, &a).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn length_tolerance() {
        let a = noise(2000, 7);
        assert!(sim_loss(&a, &a.fit_to(1900)).is_ok());
        assert!(sim_loss(&a, &a.fit_to(1000)).is_err());
    }
}
