//! Connectionist temporal classification in log space.

use super::transcript::BLANK;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Minimum frames to emit `label`: one per symbol plus a separating blank
/// between each pair of equal neighbours.
pub fn ctc_required_frames(label: &[usize]) -> usize {
    label.len() + label.windows(2).filter(|w| w[0] == w[1]).count()
}

fn log_softmax_rows(logits: &Tensor) -> Vec<f64> {
    let v = logits.cols();
    let mut out = Vec::with_capacity(logits.numel());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|x| x - lse));
    }
    debug_assert_eq!(out.len(), logits.rows() * v);
    out
}

fn extended(label: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * label.len() + 1);
    ext.push(BLANK);
    for &l in label {
        ext.push(l);
        ext.push(BLANK);
    }
    ext
}

fn can_skip(ext: &[usize], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

struct Lattice {
    /// log α_t(s): paths through (t, s), emissions up to and including t.
    alpha: Vec<f64>,
    /// log β_t(s): continuation from (t, s), emissions strictly after t.
    beta: Vec<f64>,
    log_p: f64,
}

fn lattice(lp: &[f64], t_len: usize, v: usize, ext: &[usize]) -> Lattice {
    let s_len = ext.len();
    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp[ext[0]];
    if s_len > 1 {
        alpha[1] = lp[ext[1]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                a = log_add(a, alpha[(t - 1) * s_len + s - 1]);
            }
            if can_skip(ext, s) {
                a = log_add(a, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = if a == ninf { ninf } else { a + lp[t * v + ext[s]] };
        }
    }
    let last = (t_len - 1) * s_len;
    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }
    let mut beta = vec![ninf; t_len * s_len];
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = |s2: usize| beta[(t + 1) * s_len + s2] + lp[(t + 1) * v + ext[s2]];
            let mut b = next(s);
            if s + 1 < s_len {
                b = log_add(b, next(s + 1));
            }
            if s + 2 < s_len && can_skip(ext, s + 2) {
                b = log_add(b, next(s + 2));
            }
            beta[t * s_len + s] = b;
        }
    }
    Lattice { alpha, beta, log_p }
}

fn check(logits: &Tensor, label: &[usize]) -> Result<()> {
    if logits.shape().len() != 2 || logits.rows() == 0 {
        return Err(Error::shape("ctc_loss", format!("logits must be T × V, got {:?}", logits.shape())));
    }
    let v = logits.cols();
    if let Some(&bad) = label.iter().find(|&&l| l == BLANK || l >= v) {
        return Err(Error::Config(format!("label id {bad} is blank or ≥ vocab {v}")));
    }
    Ok(())
}

/// `−log P(label | logits)`; `+∞` when the label cannot be aligned.
pub fn ctc_loss_value(logits: &Tensor, label: &[usize]) -> Result<f64> {
    check(logits, label)?;
    if ctc_required_frames(label) > logits.rows() {
        return Ok(f64::INFINITY);
    }
    let lp = log_softmax_rows(logits);
    Ok(-lattice(&lp, logits.rows(), logits.cols(), &extended(label)).log_p)
}

/// Differentiable CTC loss plus an alignability flag.
#[derive(Clone, Copy, Debug)]
pub struct CtcLoss {
    pub loss: Var,
    /// False when `T` is too short; the loss is then `+∞` with zero gradient.
    pub alignable: bool,
}

impl Tape {
    pub fn ctc_loss(&mut self, logits: Var, label: &[usize]) -> Result<CtcLoss> {
        let lv = self.value(logits);
        check(lv, label)?;
        let (t_len, v) = (lv.rows(), lv.cols());
        if ctc_required_frames(label) > t_len {
            let loss = self.custom(
                Tensor::scalar(f64::INFINITY),
                vec![logits],
                Box::new(move |_, _, _| vec![Some(vec![0.0; t_len * v])]),
            );
            return Ok(CtcLoss { loss, alignable: false });
        }
        let lp = log_softmax_rows(lv);
        let ext = extended(label);
        let lat = lattice(&lp, t_len, v, &ext);
        let s_len = ext.len();
        // ∂(−log P)/∂logit = softmax − posterior occupancy of the symbol
        let mut grad = vec![0.0; t_len * v];
        for t in 0..t_len {
            let mut occ = vec![f64::NEG_INFINITY; v];
            for s in 0..s_len {
                let k = ext[s];
                occ[k] = log_add(occ[k], lat.alpha[t * s_len + s] + lat.beta[t * s_len + s]);
            }
            for k in 0..v {
                grad[t * v + k] = lp[t * v + k].exp() - (occ[k] - lat.log_p).exp();
            }
        }
        let loss = self.custom(
            Tensor::scalar(-lat.log_p),
            vec![logits],
            Box::new(move |g, _, _| vec![Some(grad.iter().map(|x| x * g[0]).collect())]),
        );
        Ok(CtcLoss { loss, alignable: true })
    }
}
