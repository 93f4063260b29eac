//! Convolutional speech tokenizers.
//!
//! Both families share one encoder and one decoder. The encoder is a stack of
//! strided 1-D convolutions followed by a linear embedding head producing
//! `T × D` real-valued tokens at `sample_rate / Π strides` frames per second.
//! The decoder mirrors it with transposed convolutions. The discrete family
//! inserts a residual vector quantizer between the two; the continuous family
//! passes the embeddings straight through.
//!
//! Each stage with stride `s` uses kernel `s + 2⌊s/2⌋` and padding `⌊s/2⌋`
//! by default, so the encoder maps `N` samples to exactly `⌊N/Π s⌋` frames and
//! the decoder maps `T` frames back to `T·Π s` samples.

mod config;
mod rvq;

pub use config::{Activation, EncoderConfig, HeadKind, RvqConfig, TokenizerConfig, TokenizerMode};
pub use rvq::{rvq_quantize, rvq_update_ema, Assignments, Codebooks, QuantizedSequence, Quantized};

use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{conv1d_out_len, Bound, Params, Tape, Tensor, Var};

/// `T × D` token matrix with its frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub tokens: Tensor,
    pub token_rate_hz: f64,
    pub source_sample_rate: u32,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }
}

/// Weights and (in discrete mode) codebooks of one tokenizer.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    pub config: TokenizerConfig,
    pub encoder: Params,
    pub decoder: Params,
    pub codebooks: Option<Codebooks>,
}

/// Result of a differentiable encode → bottleneck → decode pass.
pub struct Reconstruction {
    pub tokens: Var,
    /// Bottleneck output fed to the decoder (ẑ in discrete mode).
    pub bottleneck: Var,
    pub audio: Var,
    pub quantized: Option<Quantized>,
}

pub(crate) fn activate(tape: &mut Tape, act: Activation, x: Var) -> Result<Var> {
    match act {
        Activation::Tanh => tape.tanh(x),
        Activation::Relu => tape.relu(x),
        Activation::Gelu => tape.gelu(x),
    }
}

impl Tokenizer {
    pub fn new(config: TokenizerConfig, rng: &mut Rng) -> Result<Self> {
        config.encoder.validate()?;
        let enc = &config.encoder;
        let mut encoder = Params::new();
        let mut decoder = Params::new();
        let mut c_in = 1;
        for (i, &c_out) in enc.channels.iter().enumerate() {
            let k = enc.kernel(i);
            let std = (1.0 / (c_in * k) as f64).sqrt();
            encoder.insert(format!("conv{i}.w"), Tensor::randn(&[c_out, c_in, k], std, rng));
            encoder.insert(format!("conv{i}.b"), Tensor::zeros(&[c_out]));
            c_in = c_out;
        }
        let d = enc.token_dim;
        let c_last = c_in;
        encoder.insert("head.w", Tensor::randn(&[c_last, d], (1.0 / c_last as f64).sqrt(), rng));
        encoder.insert("head.b", Tensor::zeros(&[d]));

        decoder.insert("proj.w", Tensor::randn(&[d, c_last], (1.0 / d as f64).sqrt(), rng));
        decoder.insert("proj.b", Tensor::zeros(&[c_last]));
        let n = enc.channels.len();
        for j in 0..n {
            let stage = n - 1 - j;
            let c_in = enc.channels[stage];
            let c_out = if stage == 0 { 1 } else { enc.channels[stage - 1] };
            let k = enc.kernel(stage);
            let std = (enc.strides[stage] as f64 / (c_in * k) as f64).sqrt();
            decoder.insert(format!("deconv{j}.w"), Tensor::randn(&[c_in, c_out, k], std, rng));
            decoder.insert(format!("deconv{j}.b"), Tensor::zeros(&[c_out]));
        }
        let codebooks = match config.mode {
            TokenizerMode::Continuous => None,
            TokenizerMode::Discrete => {
                let r = &config.rvq;
                Some(Codebooks::random(r.num_quantizers, r.codebook_size, d, 0.1, rng))
            }
        };
        Ok(Self {
            config,
            encoder,
            decoder,
            codebooks,
        })
    }

    pub fn mode(&self) -> TokenizerMode {
        self.config.mode
    }

    pub fn sample_rate(&self) -> u32 {
        self.config.encoder.sample_rate
    }

    pub fn downsample_factor(&self) -> usize {
        self.config.encoder.downsample_factor()
    }

    pub fn token_dim(&self) -> usize {
        self.config.encoder.token_dim
    }

    /// Channels of the last conv stage (the width of encoder features).
    pub fn feature_dim(&self) -> usize {
        *self.config.encoder.channels.last().expect("validated")
    }

    /// Scalar count of encoder plus decoder, excluding codebooks.
    pub fn num_weights(&self) -> usize {
        self.encoder.num_scalars() + self.decoder.num_scalars()
    }

    /// Shortest input producing at least one frame.
    pub fn min_input_len(&self) -> usize {
        let enc = &self.config.encoder;
        let mut need = 1;
        for i in (0..enc.strides.len()).rev() {
            let (k, s, p) = (enc.kernel(i), enc.strides[i], enc.padding(i));
            // smallest t with floor((t + 2p - k)/s) + 1 >= need
            need = ((need - 1) * s + k).saturating_sub(2 * p).max(1);
        }
        need
    }

    /// Number of frames for `n` input samples.
    pub fn num_frames(&self, n: usize) -> Option<usize> {
        let enc = &self.config.encoder;
        let mut t = n;
        for i in 0..enc.strides.len() {
            t = conv1d_out_len(t, enc.kernel(i), enc.strides[i], enc.padding(i))?;
            if t == 0 {
                return None;
            }
        }
        Some(t)
    }

    fn check_input(&self, n: usize) -> Result<()> {
        let need = self.min_input_len();
        if n < need || self.num_frames(n).is_none() {
            return Err(Error::InputTooShort { needed: need, got: n });
        }
        Ok(())
    }

    /// Conv stack only: audio `1 × N` → features `C × T`.
    pub fn features_graph(&self, tape: &mut Tape, enc: &Bound, audio: Var) -> Result<Var> {
        let cfg = &self.config.encoder;
        self.check_input(tape.shape(audio)[1])?;
        let mut x = audio;
        for i in 0..cfg.strides.len() {
            let w = enc.get(&format!("conv{i}.w"));
            x = tape.conv1d(x, w, cfg.strides[i], cfg.padding(i))?;
            x = tape.add_channel_bias(x, enc.get(&format!("conv{i}.b")))?;
            x = activate(tape, cfg.activation, x)?;
        }
        Ok(x)
    }

    /// Embedding head: features `C × T` → tokens `T × D`.
    pub fn head_graph(&self, tape: &mut Tape, enc: &Bound, features: Var) -> Result<Var> {
        let ft = tape.transpose(features)?;
        tape.linear(ft, enc.get("head.w"), enc.get("head.b"))
    }

    /// Audio `1 × N` → tokens `T × D`.
    pub fn encode_graph(&self, tape: &mut Tape, enc: &Bound, audio: Var) -> Result<Var> {
        let f = self.features_graph(tape, enc, audio)?;
        self.head_graph(tape, enc, f)
    }

    /// Tokens `T × D` → audio `1 × T·Π s`.
    pub fn decode_graph(&self, tape: &mut Tape, dec: &Bound, tokens: Var) -> Result<Var> {
        let cfg = &self.config.encoder;
        let shape = tape.shape(tokens).to_vec();
        if shape.len() != 2 || shape[1] != cfg.token_dim {
            return Err(Error::Config(format!(
                "decoder expects T × {} tokens, got {shape:?}",
                cfg.token_dim
            )));
        }
        let h = tape.linear(tokens, dec.get("proj.w"), dec.get("proj.b"))?;
        let mut x = tape.transpose(h)?;
        let n = cfg.strides.len();
        for j in 0..n {
            let stage = n - 1 - j;
            let w = dec.get(&format!("deconv{j}.w"));
            x = tape.conv_transpose1d(x, w, cfg.strides[stage], cfg.padding(stage))?;
            x = tape.add_channel_bias(x, dec.get(&format!("deconv{j}.b")))?;
            if j + 1 < n {
                x = activate(tape, cfg.activation, x)?;
            }
        }
        Ok(x)
    }

    /// Applies the bottleneck to `tokens`: straight-through RVQ in discrete
    /// mode, identity otherwise.
    pub fn bottleneck_graph(&self, tape: &mut Tape, tokens: Var) -> Result<(Var, Option<Quantized>)> {
        match (&self.codebooks, self.mode()) {
            (Some(cb), TokenizerMode::Discrete) => {
                let q = cb.quantize(tape.value(tokens))?;
                let zhat = tape.straight_through(tokens, q.zhat.clone())?;
                Ok((zhat, Some(q)))
            }
            (None, TokenizerMode::Discrete) => Err(Error::Config("discrete tokenizer has no codebooks".into())),
            _ => Ok((tokens, None)),
        }
    }

    /// Full differentiable round trip of a `1 × N` audio var.
    pub fn reconstruct_graph(&self, tape: &mut Tape, enc: &Bound, dec: &Bound, audio: Var) -> Result<Reconstruction> {
        let tokens = self.encode_graph(tape, enc, audio)?;
        let (bottleneck, quantized) = self.bottleneck_graph(tape, tokens)?;
        let out = self.decode_graph(tape, dec, bottleneck)?;
        Ok(Reconstruction {
            tokens,
            bottleneck,
            audio: out,
            quantized,
        })
    }

    fn check_rate(&self, buf: &AudioBuffer) -> Result<()> {
        if buf.sample_rate != self.sample_rate() {
            return Err(Error::Config(format!(
                "tokenizer runs at {} Hz, got {} Hz audio",
                self.sample_rate(),
                buf.sample_rate
            )));
        }
        Ok(())
    }

    pub fn encode_continuous(&self, buf: &AudioBuffer) -> Result<TokenSequence> {
        self.check_rate(buf)?;
        let mut tape = Tape::new();
        let enc = self.encoder.bind(&mut tape, false);
        let a = tape.constant(Tensor::matrix(1, buf.len(), buf.samples.clone())?);
        let z = self.encode_graph(&mut tape, &enc, a)?;
        let tokens = tape.value(z).clone();
        if !tokens.all_finite() {
            return Err(Error::NonFinite { op: "encode" });
        }
        Ok(TokenSequence {
            tokens,
            token_rate_hz: self.config.encoder.token_rate_hz(),
            source_sample_rate: buf.sample_rate,
        })
    }

    /// Encodes and quantizes; errors in continuous mode.
    pub fn encode_discrete(&self, buf: &AudioBuffer) -> Result<(QuantizedSequence, TokenSequence)> {
        let cb = self
            .codebooks
            .as_ref()
            .ok_or_else(|| Error::Config("tokenizer has no codebooks".into()))?;
        let z = self.encode_continuous(buf)?;
        let (codes, zhat, _) = rvq_quantize(&z, cb)?;
        Ok((codes, zhat))
    }

    pub fn decode(&self, tokens: &TokenSequence) -> Result<AudioBuffer> {
        self.decode_tensor(&tokens.tokens)
    }

    pub fn decode_tensor(&self, tokens: &Tensor) -> Result<AudioBuffer> {
        let mut tape = Tape::new();
        let dec = self.decoder.bind(&mut tape, false);
        let z = tape.constant(tokens.clone());
        let y = self.decode_graph(&mut tape, &dec, z)?;
        AudioBuffer::new(tape.value(y).data().to_vec(), self.sample_rate())
    }

    /// Encode → optional RVQ → decode, trimmed or zero-padded to the input
    /// length. `Discrete` requires codebooks.
    pub fn roundtrip(&self, buf: &AudioBuffer, mode: TokenizerMode) -> Result<AudioBuffer> {
        let z = self.encode_continuous(buf)?;
        let tokens = match mode {
            TokenizerMode::Continuous => z.tokens,
            TokenizerMode::Discrete => {
                let cb = self
                    .codebooks
                    .as_ref()
                    .ok_or_else(|| Error::Config("discrete round trip needs codebooks".into()))?;
                cb.quantize(&z.tokens)?.zhat
            }
        };
        Ok(self.decode_tensor(&tokens)?.fit_to(buf.len()))
    }

    /// Every learnable tensor plus codebook state, prefixed for a container.
    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = Vec::new();
        out.extend(self.encoder.iter().map(|(n, t)| (format!("encoder.{n}"), t.clone())));
        out.extend(self.decoder.iter().map(|(n, t)| (format!("decoder.{n}"), t.clone())));
        if let Some(cb) = &self.codebooks {
            out.extend(cb.to_tensors("rvq."));
        }
        out
    }

    /// Rebuilds from a config and tensors written by [`Tokenizer::to_tensors`].
    pub fn from_tensors(config: TokenizerConfig, tensors: &[(String, Tensor)]) -> Result<Self> {
        let mut tok = Self::new(config, &mut Rng::new(0))?;
        let all: Params = {
            let mut p = Params::new();
            for (n, t) in tensors {
                p.insert(n.clone(), t.clone());
            }
            p
        };
        tok.encoder.load_from(&all.extract_prefixed("encoder."))?;
        tok.decoder.load_from(&all.extract_prefixed("decoder."))?;
        if tok.mode() == TokenizerMode::Discrete {
            let nq = tok.config.rvq.num_quantizers;
            let cb = Codebooks::from_tensors(nq, |n| all.get(n).cloned(), "rvq.")?;
            if cb.codebook_size() != tok.config.rvq.codebook_size || cb.dim() != tok.token_dim() {
                return Err(Error::Checkpoint("codebook shape does not match the config".into()));
            }
            tok.codebooks = Some(cb);
        }
        Ok(tok)
    }
}

pub fn encode_continuous(buf: &AudioBuffer, tokenizer: &Tokenizer) -> Result<TokenSequence> {
    tokenizer.encode_continuous(buf)
}

pub fn decode(tokens: &TokenSequence, tokenizer: &Tokenizer) -> Result<AudioBuffer> {
    tokenizer.decode(tokens)
}

pub fn roundtrip(buf: &AudioBuffer, tokenizer: &Tokenizer, mode: TokenizerMode) -> Result<AudioBuffer> {
    tokenizer.roundtrip(buf, mode)
}
