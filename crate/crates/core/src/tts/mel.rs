//! Flow-matching mel generator conditioned on continuous tokens.

use serde::{Deserialize, Serialize};

use crate::dsp::{mel_spectrogram, AudioBuffer};
use crate::error::{Error, Result};
use crate::objectives::{cfm_generate, cfm_loss, CfmConfig, FieldNet};
use crate::rng::Rng;
use crate::tensor::{Bound, Tape, Tensor, Var};
use crate::tokenizer::TokenSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelFlowConfig {
    pub mel_bins: usize,
    pub hidden: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
}

impl Default for MelFlowConfig {
    fn default() -> Self {
        Self {
            mel_bins: 80,
            hidden: 128,
            fmin_hz: 0.0,
            fmax_hz: 12_000.0,
        }
    }
}

/// Velocity field over log-mel frames, one token row of conditioning per
/// frame.
#[derive(Clone, Debug)]
pub struct MelFlow {
    pub config: MelFlowConfig,
    pub net: FieldNet,
    /// Tokenizer hop in samples; the mel analysis uses this hop and a
    /// window of four hops.
    pub hop: usize,
}

/// Log-mel frames paired with token rows.
pub struct MelPairs {
    pub mel: Tensor,
    pub cond: Tensor,
}

impl MelFlow {
    pub fn new(config: MelFlowConfig, token_dim: usize, hop: usize, rng: &mut Rng) -> Self {
        let net = FieldNet::new(config.mel_bins, token_dim, config.hidden, rng);
        Self { config, net, hop }
    }

    pub fn window(&self) -> usize {
        4 * self.hop
    }

    /// Token row matching mel frame 0: the token whose span holds the
    /// centre of the first analysis window.
    pub fn token_offset(&self) -> usize {
        self.window() / 2 / self.hop
    }

    /// Mel frames of `audio` with the tokens they are paired with.
    pub fn pairs(&self, audio: &AudioBuffer, tokens: &Tensor) -> Result<MelPairs> {
        let c = &self.config;
        let mel = mel_spectrogram(audio, self.window(), self.hop, c.mel_bins, c.fmin_hz, c.fmax_hz)?;
        let off = self.token_offset();
        let n = mel.frames.len().min(tokens.rows().saturating_sub(off));
        if n == 0 {
            return Err(Error::InputTooShort {
                needed: self.window() + off * self.hop,
                got: audio.len(),
            });
        }
        let mel_data: Vec<f64> = mel.frames[..n].iter().flatten().copied().collect();
        let cond: Vec<f64> = (off..off + n).flat_map(|r| tokens.row(r).iter().copied()).collect();
        Ok(MelPairs {
            mel: Tensor::matrix(n, c.mel_bins, mel_data)?,
            cond: Tensor::matrix(n, tokens.cols(), cond)?,
        })
    }

    pub fn loss(&self, tape: &mut Tape, pairs: &MelPairs, sigma_min: f64, rng: &mut Rng) -> Result<(Var, Bound)> {
        let f = self.net.bind(tape, true);
        let l = cfm_loss(tape, &f, &pairs.mel, &pairs.cond, sigma_min, rng)?;
        Ok((l, f.bound))
    }

    /// Generates one log-mel frame per token row.
    pub fn generate(&self, tokens: &TokenSequence, cfg: &CfmConfig, rng: &mut Rng) -> Result<Tensor> {
        cfm_generate(&self.net, &tokens.tokens, (tokens.len(), self.config.mel_bins), cfg, rng)
    }
}
