//! Causal transformer over `[text ‖ speech]`.

use serde::{Deserialize, Serialize};

use super::text::{sinusoidal_positions, TextIds, TEXT_VOCAB};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Bound, Params, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub max_seq_len: usize,
    /// Continuous token width `D`; must match the tokenizer.
    pub token_dim: usize,
    /// Generation halts once the stop logit exceeds this.
    pub stop_threshold: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            model_dim: 128,
            ff_dim: 512,
            max_seq_len: 512,
            token_dim: 64,
            stop_threshold: 0.0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            errs.push(format!(
                "lm.model_dim ({}) must be divisible by lm.heads ({})",
                self.model_dim, self.heads
            ));
        }
        for (name, v) in [
            ("lm.layers", self.layers),
            ("lm.model_dim", self.model_dim),
            ("lm.ff_dim", self.ff_dim),
            ("lm.max_seq_len", self.max_seq_len),
            ("lm.token_dim", self.token_dim),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be positive"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Schema(errs))
        }
    }
}

/// Transformer weights.
#[derive(Clone, Debug)]
pub struct Lm {
    pub config: LmConfig,
    pub params: Params,
}

/// Teacher-forced outputs: next-frame predictions `T × D` and stop logits
/// `T × 1`, where row `t` is computed from text and frames `< t`.
pub struct LmOutput {
    pub predicted: Var,
    pub stop_logits: Var,
}

const LN_EPS: f64 = 1e-5;

impl Lm {
    pub fn new(config: LmConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (dm, ff, d) = (config.model_dim, config.ff_dim, config.token_dim);
        let mut p = Params::new();
        let s_dm = (1.0 / dm as f64).sqrt();
        p.insert("text.table", Tensor::randn(&[TEXT_VOCAB, dm], 0.5, rng));
        p.insert("speech_in.w", Tensor::randn(&[d, dm], (1.0 / d as f64).sqrt(), rng));
        p.insert("speech_in.b", Tensor::zeros(&[dm]));
        p.insert("bos", Tensor::randn(&[1, dm], 0.5, rng));
        // residual branches start small so the stack begins near identity
        let s_out = s_dm / (2.0 * config.layers as f64).sqrt();
        for l in 0..config.layers {
            p.insert(format!("l{l}.ln1.g"), Tensor::full(&[dm], 1.0));
            p.insert(format!("l{l}.ln1.b"), Tensor::zeros(&[dm]));
            for w in ["wq", "wk", "wv"] {
                p.insert(format!("l{l}.{w}"), Tensor::randn(&[dm, dm], s_dm, rng));
            }
            p.insert(format!("l{l}.wo"), Tensor::randn(&[dm, dm], s_out, rng));
            p.insert(format!("l{l}.ln2.g"), Tensor::full(&[dm], 1.0));
            p.insert(format!("l{l}.ln2.b"), Tensor::zeros(&[dm]));
            p.insert(format!("l{l}.ff1.w"), Tensor::randn(&[dm, ff], s_dm, rng));
            p.insert(format!("l{l}.ff1.b"), Tensor::zeros(&[ff]));
            p.insert(format!("l{l}.ff2.w"), Tensor::randn(&[ff, dm], (1.0 / ff as f64).sqrt() / (2.0 * config.layers as f64).sqrt(), rng));
            p.insert(format!("l{l}.ff2.b"), Tensor::zeros(&[dm]));
        }
        p.insert("final_ln.g", Tensor::full(&[dm], 1.0));
        p.insert("final_ln.b", Tensor::zeros(&[dm]));
        p.insert("out.w", Tensor::randn(&[dm, d], s_dm, rng));
        p.insert("out.b", Tensor::zeros(&[d]));
        p.insert("stop.w", Tensor::randn(&[dm, 1], s_dm, rng));
        p.insert("stop.b", Tensor::full(&[1], -2.0));
        Ok(Self { config, params: p })
    }

    fn layer_norm(&self, tape: &mut Tape, p: &Bound, x: Var, name: &str) -> Result<Var> {
        let rows = tape.shape(x)[0];
        let n = tape.layernorm_lastdim(x, LN_EPS)?;
        let g = tape.expand_rows(p.get(&format!("{name}.g")), rows)?;
        let b = tape.expand_rows(p.get(&format!("{name}.b")), rows)?;
        let y = tape.mul(n, g)?;
        tape.add(y, b)
    }

    fn attention(&self, tape: &mut Tape, p: &Bound, x: Var, l: usize, mask: &[bool]) -> Result<Var> {
        let (h, dm) = (self.config.heads, self.config.model_dim);
        let dh = dm / h;
        let q = tape.matmul(x, p.get(&format!("l{l}.wq")))?;
        let k = tape.matmul(x, p.get(&format!("l{l}.wk")))?;
        let v = tape.matmul(x, p.get(&format!("l{l}.wv")))?;
        let mut heads = Vec::with_capacity(h);
        for i in 0..h {
            let qi = tape.slice_cols(q, i * dh, (i + 1) * dh)?;
            let ki = tape.slice_cols(k, i * dh, (i + 1) * dh)?;
            let vi = tape.slice_cols(v, i * dh, (i + 1) * dh)?;
            let kt = tape.transpose(ki)?;
            let s = tape.matmul(qi, kt)?;
            let s = tape.scale(s, 1.0 / (dh as f64).sqrt())?;
            let a = tape.masked_softmax_lastdim(s, mask)?;
            heads.push(tape.matmul(a, vi)?);
        }
        let cat = tape.concat_cols(&heads)?;
        tape.matmul(cat, p.get(&format!("l{l}.wo")))
    }

    /// Input rows for the speech span: `[bos, proj(M_0), …, proj(M_{T−2})]`.
    fn speech_inputs(&self, tape: &mut Tape, p: &Bound, frames: Var) -> Result<Var> {
        let t = tape.shape(frames)[0];
        let bos = p.get("bos");
        if t <= 1 {
            return Ok(bos);
        }
        let prev = tape.slice_rows(frames, 0, t - 1)?;
        let proj = tape.linear(prev, p.get("speech_in.w"), p.get("speech_in.b"))?;
        tape.concat_rows(&[bos, proj])
    }

    /// Teacher-forced pass. `frames` is `T × D` with `T ≥ 1`.
    pub fn forward_graph(&self, tape: &mut Tape, p: &Bound, text: &TextIds, frames: Var) -> Result<LmOutput> {
        let cfg = &self.config;
        let shape = tape.shape(frames).to_vec();
        if shape.len() != 2 || shape[1] != cfg.token_dim || shape[0] == 0 {
            return Err(Error::shape(
                "lm_forward",
                format!("speech frames must be T × {} with T ≥ 1, got {shape:?}", cfg.token_dim),
            ));
        }
        let (l_text, t) = (text.len(), shape[0]);
        let total = l_text + t;
        if total > cfg.max_seq_len {
            return Err(Error::Config(format!(
                "sequence of {l_text} text + {t} speech positions exceeds max_seq_len {}",
                cfg.max_seq_len
            )));
        }
        let emb = tape.gather_rows(p.get("text.table"), &text.ids)?;
        let speech = self.speech_inputs(tape, p, frames)?;
        let seq = if l_text > 0 { tape.concat_rows(&[emb, speech])? } else { speech };
        let pos = tape.constant(sinusoidal_positions(total, cfg.model_dim));
        let mut x = tape.add(seq, pos)?;
        let mask: Vec<bool> = (0..total * total).map(|i| i % total <= i / total).collect();
        for l in 0..cfg.layers {
            let h = self.layer_norm(tape, p, x, &format!("l{l}.ln1"))?;
            let a = self.attention(tape, p, h, l, &mask)?;
            x = tape.add(x, a)?;
            let h = self.layer_norm(tape, p, x, &format!("l{l}.ln2"))?;
            let f = tape.linear(h, p.get(&format!("l{l}.ff1.w")), p.get(&format!("l{l}.ff1.b")))?;
            let f = tape.gelu(f)?;
            let f = tape.linear(f, p.get(&format!("l{l}.ff2.w")), p.get(&format!("l{l}.ff2.b")))?;
            x = tape.add(x, f)?;
        }
        let x = self.layer_norm(tape, p, x, "final_ln")?;
        let sp = tape.slice_rows(x, l_text, total)?;
        let predicted = tape.linear(sp, p.get("out.w"), p.get("out.b"))?;
        let stop_logits = tape.linear(sp, p.get("stop.w"), p.get("stop.b"))?;
        Ok(LmOutput {
            predicted,
            stop_logits,
        })
    }

    /// Constant-weight teacher-forced pass returning plain tensors.
    pub fn forward(&self, text: &TextIds, frames: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let f = tape.constant(frames.clone());
        let out = self.forward_graph(&mut tape, &p, text, f)?;
        Ok((tape.value(out.predicted).clone(), tape.value(out.stop_logits).clone()))
    }
}

/// Stop labels for a teacher-forced utterance of `t` frames: 1 on the last.
pub fn stop_targets(t: usize) -> Vec<f64> {
    (0..t).map(|i| if i + 1 == t { 1.0 } else { 0.0 }).collect()
}
