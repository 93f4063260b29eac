//! Systems under test: the tokenizer round trip and calibration stubs.

use crate::dsp::fft::rfft_full;
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::tokenizer::{Tokenizer, TokenizerMode};

/// Anything that maps audio to audio at a fixed native rate.
pub trait AudioSystem {
    fn native_rate(&self) -> u32;
    fn process(&self, input: &AudioBuffer) -> Result<AudioBuffer>;
    fn describe(&self) -> String;
}

/// Returns its input unchanged.
pub struct IdentitySystem {
    pub rate: u32,
}

impl AudioSystem for IdentitySystem {
    fn native_rate(&self) -> u32 {
        self.rate
    }

    fn process(&self, input: &AudioBuffer) -> Result<AudioBuffer> {
        Ok(input.clone())
    }

    fn describe(&self) -> String {
        "identity".into()
    }
}

/// Brick-wall lowpass applied in the DFT domain of the whole signal.
pub struct IdealLowpass {
    pub rate: u32,
    pub cutoff_hz: f64,
}

impl AudioSystem for IdealLowpass {
    fn native_rate(&self) -> u32 {
        self.rate
    }

    fn process(&self, input: &AudioBuffer) -> Result<AudioBuffer> {
        let n = input.len();
        if n == 0 {
            return Ok(input.clone());
        }
        let mut spec = rfft_full(&input.samples, n);
        let sr = input.sample_rate as f64;
        for (k, c) in spec.iter_mut().enumerate() {
            if k.min(n - k) as f64 * sr / n as f64 > self.cutoff_hz {
                *c = rustfft::num_complex::Complex64::new(0.0, 0.0);
            }
        }
        rustfft::FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
        let samples = spec.iter().map(|c| c.re / n as f64).collect();
        AudioBuffer::new(samples, input.sample_rate)
    }

    fn describe(&self) -> String {
        format!("ideal lowpass {} Hz", self.cutoff_hz)
    }
}

/// A tokenizer's round trip in one mode.
pub struct TokenizerSystem<'a> {
    pub tokenizer: &'a Tokenizer,
    pub mode: TokenizerMode,
}

impl AudioSystem for TokenizerSystem<'_> {
    fn native_rate(&self) -> u32 {
        self.tokenizer.sample_rate()
    }

    fn process(&self, input: &AudioBuffer) -> Result<AudioBuffer> {
        if input.sample_rate != self.native_rate() {
            return Err(Error::Config(format!(
                "tokenizer system runs at {} Hz, got {} Hz",
                self.native_rate(),
                input.sample_rate
            )));
        }
        self.tokenizer.roundtrip(input, self.mode)
    }

    fn describe(&self) -> String {
        format!("{} tokenizer round trip", self.mode.as_str())
    }
}
