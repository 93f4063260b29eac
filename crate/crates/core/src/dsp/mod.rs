//! Audio buffers and the signal processing the analyses stand on.

mod band;
pub mod fft;
mod filter;
mod probe;
mod resample;
mod stft;
mod wav;

pub use band::{align_by_xcorr, band_energy, retention, retention_aligned, DEFAULT_MAX_LAG};
pub use filter::{kaiser_beta, lowpass, lowpass_taps};
pub use probe::{make_probe, ProbeKind};
pub use resample::resample;
pub use stft::{
    hann, istft, mel_filterbank, mel_spectrogram, mel_to_hz, hz_to_mel, stft, MelSpectrogram, Stft,
    Window,
};
pub use wav::{read_wav, write_wav, decode_wav, encode_wav_pcm16};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono audio: samples plus sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Config(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * c).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Zero-pads or truncates to exactly `len` samples.
    pub fn fit_to(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// Frequency band `center ± half_width`, in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub center_hz: f64,
    pub half_width_hz: f64,
}

impl BandSpec {
    pub fn new(center_hz: f64, half_width_hz: f64) -> Self {
        Self {
            center_hz,
            half_width_hz,
        }
    }

    pub fn lo(&self) -> f64 {
        self.center_hz - self.half_width_hz
    }

    pub fn hi(&self) -> f64 {
        self.center_hz + self.half_width_hz
    }

    /// Checks the band sits strictly above DC and at or below Nyquist.
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyq = sample_rate as f64 / 2.0;
        if !(self.half_width_hz >= 0.0 && self.lo() > 0.0 && self.hi() <= nyq) {
            return Err(Error::Config(format!(
                "band {} ± {} Hz outside (0, {nyq}] Hz",
                self.center_hz, self.half_width_hz
            )));
        }
        Ok(())
    }

    pub fn fits(&self, sample_rate: u32) -> bool {
        self.validate(sample_rate).is_ok()
    }
}

/// Power ratio in decibels, `10·log10(num/den)`.
pub fn db(num: f64, den: f64) -> f64 {
    10.0 * (num / den).log10()
}

/// Signal-to-noise ratio of `estimate` against `reference`, in dB, over the
/// common prefix. A perfect match returns `cap_db`.
pub fn snr_db(reference: &[f64], estimate: &[f64], cap_db: f64) -> f64 {
    let n = reference.len().min(estimate.len());
    let sig: f64 = reference[..n].iter().map(|x| x * x).sum();
    let err: f64 = reference[..n]
        .iter()
        .zip(&estimate[..n])
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if err == 0.0 {
        return cap_db;
    }
    if sig == 0.0 {
        return -cap_db;
    }
    db(sig, err).min(cap_db)
}
