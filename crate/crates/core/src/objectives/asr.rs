use serde::{Deserialize, Serialize};

use super::transcript::VOCAB_SIZE;
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Bound, Params, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsrConfig {
    pub hidden: usize,
    pub kernel: usize,
}

impl Default for AsrConfig {
    fn default() -> Self {
        Self { hidden: 64, kernel: 3 }
    }
}

/// Two same-length convolutions and a linear layer mapping encoder
/// features `C × T` to per-frame character logits `T × V`.
#[derive(Clone, Debug)]
pub struct AsrHead {
    pub config: AsrConfig,
    pub params: Params,
    pub vocab: usize,
}

impl AsrHead {
    pub fn new(in_channels: usize, config: AsrConfig, rng: &mut Rng) -> Self {
        Self::with_vocab(in_channels, VOCAB_SIZE, config, rng)
    }

    pub fn with_vocab(in_channels: usize, vocab: usize, config: AsrConfig, rng: &mut Rng) -> Self {
        let (h, k) = (config.hidden, config.kernel);
        let mut params = Params::new();
        params.insert("conv0.w", Tensor::randn(&[h, in_channels, k], (1.0 / (in_channels * k) as f64).sqrt(), rng));
        params.insert("conv0.b", Tensor::zeros(&[h]));
        params.insert("conv1.w", Tensor::randn(&[h, h, k], (1.0 / (h * k) as f64).sqrt(), rng));
        params.insert("conv1.b", Tensor::zeros(&[h]));
        params.insert("out.w", Tensor::randn(&[h, vocab], (1.0 / h as f64).sqrt(), rng));
        params.insert("out.b", Tensor::zeros(&[vocab]));
        Self { config, params, vocab }
    }

    pub fn forward_graph(&self, tape: &mut Tape, p: &Bound, features: Var) -> Result<Var> {
        let pad = self.config.kernel / 2;
        let mut x = features;
        for i in 0..2 {
            x = tape.conv1d(x, p.get(&format!("conv{i}.w")), 1, pad)?;
            x = tape.add_channel_bias(x, p.get(&format!("conv{i}.b")))?;
            x = tape.tanh(x)?;
        }
        let xt = tape.transpose(x)?;
        tape.linear(xt, p.get("out.w"), p.get("out.b"))
    }

    /// Inference on a constant feature map.
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let f = tape.constant(features.clone());
        let y = self.forward_graph(&mut tape, &p, f)?;
        Ok(tape.value(y).clone())
    }
}

/// Best-path decoding: argmax per frame, merge repeats, drop blanks.
pub fn greedy_decode(logits: &Tensor) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let k = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
        if k != prev && k != super::transcript::BLANK {
            out.push(k);
        }
        prev = k;
    }
    out
}
