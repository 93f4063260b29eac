//! Text-to-speech over continuous tokens.
//!
//! Text is mapped to character ids and embedded; speech is a sequence of
//! continuous tokens from the tokenizer encoder. A causal transformer reads
//! `[text ‖ speech]` and, at every speech position, regresses the next token
//! and emits a stop logit. Generation feeds predictions back until the stop
//! logit crosses the threshold, then decodes with the tokenizer decoder and
//! applies a lowpass at 95% of Nyquist.

mod lm;
mod mel;
mod text;

pub use lm::{stop_targets, Lm, LmConfig, LmOutput};
pub use mel::{MelFlow, MelFlowConfig, MelPairs};
pub use text::{sinusoidal_positions, text_tokenize, TextIds, TEXT_VOCAB};

use crate::dsp::{lowpass, AudioBuffer};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};
use crate::tokenizer::{TokenSequence, Tokenizer};

/// Learned table lookup plus sinusoidal positions, `L × model_dim`.
pub fn text_embed(lm: &Lm, ids: &TextIds) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = lm.params.bind(&mut tape, false);
    let e = tape.gather_rows(p.get("text.table"), &ids.ids)?;
    let pos = tape.constant(sinusoidal_positions(ids.len(), lm.config.model_dim));
    let y = tape.add(e, pos)?;
    Ok(tape.value(y).clone())
}

/// Per-frame generation diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub frame: usize,
    pub stop_logit: f64,
    pub token_norm: f64,
}

#[derive(Clone, Debug)]
pub struct Generation {
    pub tokens: TokenSequence,
    pub trace: Vec<TraceRow>,
    /// True when the stop head ended generation before `max_frames`.
    pub stopped: bool,
}

/// Autoregressive generation. Prompt tokens, if given, are a prefix that is
/// conditioned on but not returned.
pub fn generate(
    lm: &Lm,
    tokenizer: &Tokenizer,
    text: &TextIds,
    prompt: Option<&AudioBuffer>,
    max_frames: usize,
) -> Result<Generation> {
    let d = lm.config.token_dim;
    if d != tokenizer.token_dim() {
        return Err(Error::Config(format!(
            "lm.token_dim {d} does not match tokenizer token_dim {}",
            tokenizer.token_dim()
        )));
    }
    let mut frames: Vec<f64> = match prompt {
        Some(a) => tokenizer.encode_continuous(a)?.tokens.into_data(),
        None => Vec::new(),
    };
    let prefix = frames.len() / d;
    let mut trace = Vec::new();
    let mut stopped = false;
    for step in 0..max_frames {
        let n = frames.len() / d;
        let mut input = frames.clone();
        input.extend(std::iter::repeat(0.0).take(d));
        let (pred, stop) = lm.forward(text, &Tensor::matrix(n + 1, d, input)?)?;
        let row = pred.row(n).to_vec();
        let s = stop.at2(n, 0);
        if !row.iter().all(|x| x.is_finite()) || !s.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("non-finite prediction at frame {step}"),
            });
        }
        trace.push(TraceRow {
            frame: step,
            stop_logit: s,
            token_norm: row.iter().map(|x| x * x).sum::<f64>().sqrt(),
        });
        frames.extend_from_slice(&row);
        if s > lm.config.stop_threshold {
            stopped = true;
            break;
        }
    }
    let out: Vec<f64> = frames[prefix * d..].to_vec();
    let t = out.len() / d;
    Ok(Generation {
        tokens: TokenSequence {
            tokens: Tensor::new(vec![t, d], out)?,
            token_rate_hz: tokenizer.config.encoder.token_rate_hz(),
            source_sample_rate: tokenizer.sample_rate(),
        },
        trace,
        stopped,
    })
}

/// Fraction of Nyquist kept by the output lowpass.
pub const OUTPUT_LOWPASS_FRACTION: f64 = 0.95;

/// Decodes tokens and applies the output lowpass.
pub fn render(tokenizer: &Tokenizer, tokens: &TokenSequence) -> Result<AudioBuffer> {
    if tokens.is_empty() {
        return Ok(AudioBuffer::silence(0, tokenizer.sample_rate()));
    }
    let audio = tokenizer.decode(tokens)?;
    lowpass(&audio, OUTPUT_LOWPASS_FRACTION * audio.nyquist())
}

pub fn synthesize(
    lm: &Lm,
    tokenizer: &Tokenizer,
    text: &str,
    prompt: Option<&AudioBuffer>,
    max_frames: usize,
) -> Result<(AudioBuffer, Generation)> {
    let ids = text_tokenize(text)?;
    let g = generate(lm, tokenizer, &ids, prompt, max_frames)?;
    Ok((render(tokenizer, &g.tokens)?, g))
}
