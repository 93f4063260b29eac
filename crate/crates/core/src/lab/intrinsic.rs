//! Intrinsic quality metrics on held-out clips.

use serde::{Deserialize, Serialize};

use super::systems::AudioSystem;
use crate::dsp::{mel_spectrogram, snr_db, AudioBuffer};
use crate::error::{Error, Result};
use crate::pipeline::{lm_validation, Checkpoint, Clip};

pub const SNR_CAP_DB: f64 = 120.0;
pub const MEL_WINDOW: usize = 1024;
pub const MEL_HOP: usize = 256;
pub const MEL_BINS: usize = 80;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicReport {
    pub mode: String,
    pub checkpoint_id: String,
    pub clips: usize,
    /// Mean round-trip SNR, each clip capped at [`SNR_CAP_DB`].
    pub snr_db: f64,
    /// Mean absolute log-mel difference.
    pub mel_distance: f64,
    /// Teacher-forced next-token MSE, when the checkpoint has an LM.
    pub token_mse: Option<f64>,
}

/// Mean absolute difference of natural-log mel spectrograms over the
/// frames both signals share.
pub fn mel_distance(a: &AudioBuffer, b: &AudioBuffer) -> Result<f64> {
    if a.sample_rate != b.sample_rate {
        return Err(Error::Config("mel distance needs equal sample rates".into()));
    }
    let n = a.len().min(b.len());
    if n < MEL_WINDOW {
        return Err(Error::InputTooShort { needed: MEL_WINDOW, got: n });
    }
    let fmax = a.nyquist();
    let ma = mel_spectrogram(&a.fit_to(n), MEL_WINDOW, MEL_HOP, MEL_BINS, 0.0, fmax)?;
    let mb = mel_spectrogram(&b.fit_to(n), MEL_WINDOW, MEL_HOP, MEL_BINS, 0.0, fmax)?;
    let (mut s, mut k) = (0.0, 0usize);
    for (fa, fb) in ma.frames.iter().zip(&mb.frames) {
        for (x, y) in fa.iter().zip(fb) {
            s += (x - y).abs();
            k += 1;
        }
    }
    Ok(s / k.max(1) as f64)
}

/// Round-trip SNR and mel distance of `system` over `clips`.
pub fn intrinsic_eval(system: &dyn AudioSystem, mode: &str, checkpoint_id: &str, clips: &[Clip]) -> Result<IntrinsicReport> {
    if clips.is_empty() {
        return Err(Error::Config("intrinsic evaluation needs at least one clip".into()));
    }
    let (mut snr, mut mel) = (0.0, 0.0);
    for c in clips {
        let y = system.process(&c.audio)?.fit_to(c.audio.len());
        snr += snr_db(&c.audio.samples, &y.samples, SNR_CAP_DB).min(SNR_CAP_DB);
        mel += mel_distance(&c.audio, &y)?;
    }
    let n = clips.len() as f64;
    Ok(IntrinsicReport {
        mode: mode.to_string(),
        checkpoint_id: checkpoint_id.to_string(),
        clips: clips.len(),
        snr_db: snr / n,
        mel_distance: mel / n,
        token_mse: None,
    })
}

/// [`intrinsic_eval`] on a checkpoint's tokenizer, plus the LM's token
/// MSE when it has one.
pub fn intrinsic_eval_checkpoint(ck: &Checkpoint, mode: crate::tokenizer::TokenizerMode, clips: &[Clip]) -> Result<IntrinsicReport> {
    let sys = super::TokenizerSystem {
        tokenizer: &ck.tokenizer,
        mode,
    };
    let mut r = intrinsic_eval(&sys, mode.as_str(), &ck.id(), clips)?;
    if ck.lm.is_some() {
        r.token_mse = Some(lm_validation(ck, clips)?);
    }
    Ok(r)
}
