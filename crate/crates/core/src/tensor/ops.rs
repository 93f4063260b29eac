use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, format!("expected 2-d tensor, got {s:?}"))),
    }
}

impl Tape {
    fn unary(
        &mut self,
        op: &'static str,
        a: Var,
        f: fn(f64) -> f64,
        // derivative from (input, output)
        df: fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let av = self.value(a);
        let data: Vec<f64> = av.data().iter().map(|&x| f(x)).collect();
        check_finite(op, &data)?;
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.custom(
            out,
            vec![a],
            Box::new(move |g, p, o| {
                let ga = g
                    .iter()
                    .zip(p[0].data())
                    .zip(o.data())
                    .map(|((g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(ga)]
            }),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("add", av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.custom(
            out,
            vec![a, b],
            Box::new(|g, _, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("sub", av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.custom(
            out,
            vec![a, b],
            Box::new(|g, _, _| vec![Some(g.to_vec()), Some(g.iter().map(|x| -x).collect())]),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("mul", av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.custom(
            out,
            vec![a, b],
            Box::new(|g, p, _| {
                let ga = g.iter().zip(p[1].data()).map(|(g, y)| g * y).collect();
                let gb = g.iter().zip(p[0].data()).map(|(g, x)| g * x).collect();
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * c).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.custom(
            out,
            vec![a],
            Box::new(move |g, _, _| vec![Some(g.iter().map(|x| x * c).collect())]),
        ))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x + c).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.custom(out, vec![a], Box::new(|g, _, _| vec![Some(g.to_vec())])))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        self.unary(
            "gelu",
            a,
            |x| 0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh()),
            |x, _| {
                let u = C * (x + 0.044715 * x * x * x);
                let th = u.tanh();
                let du = C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
            },
        )
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, |_, y| y)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::NonFinite { op: "log" });
        }
        self.unary("log", a, f64::ln, |x, _| 1.0 / x)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, f64::abs, |x, _| x.signum() * (x != 0.0) as u8 as f64)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let s = av.data().iter().sum();
        let n = av.numel();
        Ok(self.custom(
            Tensor::scalar(s),
            vec![a],
            Box::new(move |g, _, _| vec![Some(vec![g[0]; n])]),
        ))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean of squared differences; a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("mse", av, bv)?;
        let n = av.numel();
        if n == 0 {
            return Err(Error::shape("mse", "empty tensors"));
        }
        let diff: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n as f64;
        Ok(self.custom(
            Tensor::scalar(loss),
            vec![a, b],
            Box::new(move |g, _, _| {
                let c = 2.0 * g[0] / n as f64;
                let ga: Vec<f64> = diff.iter().map(|d| c * d).collect();
                let gb = ga.iter().map(|x| -x).collect();
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Mean absolute difference; a scalar.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("l1", av, bv)?;
        let n = av.numel();
        if n == 0 {
            return Err(Error::shape("l1", "empty tensors"));
        }
        let diff: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let loss = diff.iter().map(|d| d.abs()).sum::<f64>() / n as f64;
        Ok(self.custom(
            Tensor::scalar(loss),
            vec![a, b],
            Box::new(move |g, _, _| {
                let c = g[0] / n as f64;
                let ga: Vec<f64> = diff
                    .iter()
                    .map(|d| if *d == 0.0 { 0.0 } else { c * d.signum() })
                    .collect();
                let gb = ga.iter().map(|x| -x).collect();
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = dims2("matmul", av)?;
        let (k2, n) = dims2("matmul", bv)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} · {:?}", av.shape(), bv.shape()),
            ));
        }
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.custom(
            out,
            vec![a, b],
            Box::new(move |g, p, _| {
                // dA = G·Bᵀ, dB = Aᵀ·G
                let (ad, bd) = (p[0].data(), p[1].data());
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let brow = &bd[kk * n..(kk + 1) * n];
                        ga[i * k + kk] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let aik = ad[i * k + kk];
                        if aik == 0.0 {
                            continue;
                        }
                        let dst = &mut gb[kk * n..(kk + 1) * n];
                        dst.iter_mut().zip(grow).for_each(|(d, x)| *d += aik * x);
                    }
                }
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = dims2("transpose", av)?;
        let out = av.transpose2()?;
        Ok(self.custom(
            out,
            vec![a],
            Box::new(move |g, _, _| {
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                vec![Some(ga)]
            }),
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(shape.to_vec())?;
        Ok(self.custom(out, vec![a], Box::new(|g, _, _| vec![Some(g.to_vec())])))
    }

    /// Repeats a length-`C` vector into a `rows × C` matrix.
    pub fn expand_rows(&mut self, v: Var, rows: usize) -> Result<Var> {
        let vv = self.value(v);
        if vv.shape().len() != 1 {
            return Err(Error::shape("expand_rows", format!("{:?} is not 1-d", vv.shape())));
        }
        let c = vv.numel();
        let data = (0..rows).flat_map(|_| vv.data().iter().copied()).collect();
        let out = Tensor::new(vec![rows, c], data)?;
        Ok(self.custom(
            out,
            vec![v],
            Box::new(move |g, _, _| {
                let mut gv = vec![0.0; c];
                for r in 0..rows {
                    gv.iter_mut().zip(&g[r * c..(r + 1) * c]).for_each(|(a, b)| *a += b);
                }
                vec![Some(gv)]
            }),
        ))
    }

    /// Repeats a length-`R` vector into an `R × cols` matrix.
    pub fn expand_cols(&mut self, v: Var, cols: usize) -> Result<Var> {
        let vv = self.value(v);
        if vv.shape().len() != 1 {
            return Err(Error::shape("expand_cols", format!("{:?} is not 1-d", vv.shape())));
        }
        let r = vv.numel();
        let data = vv.data().iter().flat_map(|&x| std::iter::repeat(x).take(cols)).collect();
        let out = Tensor::new(vec![r, cols], data)?;
        Ok(self.custom(
            out,
            vec![v],
            Box::new(move |g, _, _| {
                let gv = (0..r).map(|i| g[i * cols..(i + 1) * cols].iter().sum()).collect();
                vec![Some(gv)]
            }),
        ))
    }

    /// Rows `start..end` of a 2-d tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = dims2("slice_rows", av)?;
        if start > end || end > r {
            return Err(Error::shape("slice_rows", format!("{start}..{end} of {r} rows")));
        }
        let out = Tensor::new(vec![end - start, c], av.data()[start * c..end * c].to_vec())?;
        Ok(self.custom(
            out,
            vec![a],
            Box::new(move |g, _, _| {
                let mut ga = vec![0.0; r * c];
                ga[start * c..end * c].copy_from_slice(g);
                vec![Some(ga)]
            }),
        ))
    }

    /// Columns `start..end` of a 2-d tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = dims2("slice_cols", av)?;
        if start > end || end > c {
            return Err(Error::shape("slice_cols", format!("{start}..{end} of {c} cols")));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&av.data()[i * c + start..i * c + end]);
        }
        let out = Tensor::new(vec![r, w], data)?;
        Ok(self.custom(
            out,
            vec![a],
            Box::new(move |g, _, _| {
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    ga[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                vec![Some(ga)]
            }),
        ))
    }

    /// Stacks 2-d tensors with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs"));
        }
        let c = dims2("concat_rows", self.value(parts[0]))?.1;
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, pc) = dims2("concat_rows", self.value(p))?;
            if pc != c {
                return Err(Error::shape("concat_rows", format!("{pc} cols vs {c}")));
            }
            data.extend_from_slice(self.value(p).data());
            row_counts.push(r);
        }
        let total: usize = row_counts.iter().sum();
        let out = Tensor::new(vec![total, c], data)?;
        Ok(self.custom(
            out,
            parts.to_vec(),
            Box::new(move |g, _, _| {
                let mut off = 0;
                row_counts
                    .iter()
                    .map(|&r| {
                        let s = g[off * c..(off + r) * c].to_vec();
                        off += r;
                        Some(s)
                    })
                    .collect()
            }),
        ))
    }

    /// Joins 2-d tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let r = dims2("concat_cols", self.value(parts[0]))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = dims2("concat_cols", self.value(p))?;
            if pr != r {
                return Err(Error::shape("concat_cols", format!("{pr} rows vs {r}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; r * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pd = self.value(p).data();
            for i in 0..r {
                data[i * total + off..i * total + off + w].copy_from_slice(&pd[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let out = Tensor::new(vec![r, total], data)?;
        Ok(self.custom(
            out,
            parts.to_vec(),
            Box::new(move |g, _, _| {
                let mut off = 0;
                widths
                    .iter()
                    .map(|&w| {
                        let mut s = Vec::with_capacity(r * w);
                        for i in 0..r {
                            s.extend_from_slice(&g[i * total + off..i * total + off + w]);
                        }
                        off += w;
                        Some(s)
                    })
                    .collect()
            }),
        ))
    }

    /// Embedding lookup: row `ids[i]` of a 2-d table becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (r, c) = dims2("gather_rows", tv)?;
        if let Some(bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("id {bad} out of {r} rows")));
        }
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(tv.row(i));
        }
        let out = Tensor::new(vec![ids.len(), c], data)?;
        let ids = ids.to_vec();
        Ok(self.custom(
            out,
            vec![table],
            Box::new(move |g, _, _| {
                let mut gt = vec![0.0; r * c];
                for (k, &i) in ids.iter().enumerate() {
                    gt[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&g[k * c..(k + 1) * c])
                        .for_each(|(a, b)| *a += b);
                }
                vec![Some(gt)]
            }),
        ))
    }

    /// Softmax over the last dimension with log-sum-exp stabilization.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, None)
    }

    /// Softmax over the last dimension where entries with `allowed[i] == false`
    /// get probability zero. Every row must allow at least one entry.
    pub fn masked_softmax_lastdim(&mut self, a: Var, allowed: &[bool]) -> Result<Var> {
        if allowed.len() != self.value(a).numel() {
            return Err(Error::shape(
                "masked_softmax",
                format!("mask of {} for {:?}", allowed.len(), self.shape(a)),
            ));
        }
        self.softmax_impl(a, Some(allowed))
    }

    fn softmax_impl(&mut self, a: Var, allowed: Option<&[bool]>) -> Result<Var> {
        let av = self.value(a);
        let c = *av.shape().last().ok_or_else(|| Error::shape("softmax", "scalar input"))?;
        let rows = av.numel() / c.max(1);
        let mut out = vec![0.0; av.numel()];
        for r in 0..rows {
            let x = &av.data()[r * c..(r + 1) * c];
            let ok = |j: usize| allowed.map_or(true, |m| m[r * c + j]);
            let mx = (0..c)
                .filter(|&j| ok(j))
                .map(|j| x[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return Err(Error::NonFinite { op: "softmax" });
            }
            let mut z = 0.0;
            for j in 0..c {
                if ok(j) {
                    let e = (x[j] - mx).exp();
                    out[r * c + j] = e;
                    z += e;
                }
            }
            out[r * c..(r + 1) * c].iter_mut().for_each(|v| *v /= z);
        }
        check_finite("softmax", &out)?;
        let out = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.custom(
            out,
            vec![a],
            Box::new(move |g, _, o| {
                let y = o.data();
                let mut ga = vec![0.0; y.len()];
                for r in 0..rows {
                    let s = r * c..(r + 1) * c;
                    let dot: f64 = g[s.clone()].iter().zip(&y[s.clone()]).map(|(a, b)| a * b).sum();
                    for j in s {
                        ga[j] = y[j] * (g[j] - dot);
                    }
                }
                vec![Some(ga)]
            }),
        ))
    }

    /// Normalizes each last-dimension row to zero mean and unit variance.
    pub fn layernorm_lastdim(&mut self, a: Var, eps: f64) -> Result<Var> {
        let av = self.value(a);
        let c = *av.shape().last().ok_or_else(|| Error::shape("layernorm", "scalar input"))?;
        let rows = av.numel() / c.max(1);
        let mut out = vec![0.0; av.numel()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let x = &av.data()[r * c..(r + 1) * c];
            let mu = x.iter().sum::<f64>() / c as f64;
            let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                out[r * c + j] = (x[j] - mu) * is;
            }
        }
        let out = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.custom(
            out,
            vec![a],
            Box::new(move |g, _, o| {
                let y = o.data();
                let mut ga = vec![0.0; y.len()];
                for r in 0..rows {
                    let s = r * c..(r + 1) * c;
                    let gm = g[s.clone()].iter().sum::<f64>() / c as f64;
                    let gy = g[s.clone()].iter().zip(&y[s.clone()]).map(|(a, b)| a * b).sum::<f64>()
                        / c as f64;
                    for j in s {
                        ga[j] = inv_std[r] * (g[j] - gm - y[j] * gy);
                    }
                }
                vec![Some(ga)]
            }),
        ))
    }

    /// Mean binary cross-entropy between logits and 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.numel() != targets.len() || targets.is_empty() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("{} logits vs {} targets", lv.numel(), targets.len()),
            ));
        }
        let n = targets.len() as f64;
        let loss = lv
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let targets = targets.to_vec();
        Ok(self.custom(
            Tensor::scalar(loss),
            vec![logits],
            Box::new(move |g, p, _| {
                let gl = p[0]
                    .data()
                    .iter()
                    .zip(&targets)
                    .map(|(&x, &y)| g[0] * (1.0 / (1.0 + (-x).exp()) - y) / n)
                    .collect();
                vec![Some(gl)]
            }),
        ))
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, x)| *o += aik * x);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::eye(2));
        let b = tape.constant(Tensor::eye(2));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &Tensor::eye(2));
    }

    #[test]
    fn hand_checked_matmul() {
        let mut tape = Tape::new();
        let a = tape.constant(t2(2, 2, &[1., 2., 3., 4.]));
        let b = tape.constant(t2(2, 1, &[5., 6.]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[17., 39.]);
    }

    #[test]
    fn matmul_mismatch_reports_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] · [2, 3]"), "{err}");
    }

    #[test]
    fn mse_values() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1., 2.]));
        let b = tape.constant(Tensor::vector(vec![3., 2.]));
        let l = tape.mse(a, b).unwrap();
        assert_eq!(tape.value(l).item(), 2.0);
        let l0 = tape.mse(a, a).unwrap();
        assert_eq!(tape.value(l0).item(), 0.0);
    }

    #[test]
    fn uniform_softmax() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::full(&[4], 3.7));
        let s = tape.softmax_lastdim(a).unwrap();
        for &p in tape.value(s).data() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_extreme_logits_stay_finite() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1000.0, 0.0, -1000.0]));
        let s = tape.softmax_lastdim(a).unwrap();
        assert!((tape.value(s).data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn domain_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, -1.0]));
        let err = tape.log(a).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "log" }));
        let big = tape.constant(Tensor::vector(vec![1e4]));
        assert!(matches!(tape.exp(big).unwrap_err(), Error::NonFinite { op: "exp" }));
    }

    #[test]
    fn no_implicit_broadcast() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.add(a, b).is_err());
        let be = tape.expand_rows(b, 2).unwrap();
        assert!(tape.add(a, be).is_ok());
    }

    #[test]
    fn sum_grad_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.3, -2.0, 5.0]).with_requires_grad(true));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0).with_requires_grad(true));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::BackwardTwice)));
        tape.reset_grads();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).with_requires_grad(true));
        assert!(matches!(tape.backward(x), Err(Error::Shape { .. })));
    }
}
