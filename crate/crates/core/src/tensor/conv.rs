use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

fn conv_dims(
    op: &'static str,
    x: &Tensor,
    w: &Tensor,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (c_in, t) = match x.shape() {
        [c, t] => (*c, *t),
        s => return Err(Error::shape(op, format!("input must be C×T, got {s:?}"))),
    };
    let (a, b, k) = match w.shape() {
        [a, b, k] => (*a, *b, *k),
        s => return Err(Error::shape(op, format!("weight must be 3-d, got {s:?}"))),
    };
    Ok((c_in, t, a, b, k))
}

/// Output length of a strided cross-correlation.
pub fn conv1d_out_len(t: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = t + 2 * padding;
    (padded >= k && stride > 0).then(|| (padded - k) / stride + 1)
}

/// Output length of the matching transposed convolution.
pub fn conv_transpose1d_out_len(t: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    if t == 0 || stride == 0 {
        return None;
    }
    ((t - 1) * stride + k).checked_sub(2 * padding)
}

impl Tape {
    /// Cross-correlation of a `C_in × T` signal with a `C_out × C_in × K` kernel.
    pub fn conv1d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xv, wv) = (self.value(input), self.value(weight));
        let (c_in, t, c_out, wc_in, k) = conv_dims("conv1d", xv, wv)?;
        if wc_in != c_in {
            return Err(Error::shape(
                "conv1d",
                format!("input {:?} vs weight {:?}", xv.shape(), wv.shape()),
            ));
        }
        let t_out = conv1d_out_len(t, k, stride, padding).ok_or_else(|| {
            Error::shape(
                "conv1d",
                format!("kernel {k} larger than padded input {} (input {:?})", t + 2 * padding, xv.shape()),
            )
        })?;
        let out = conv_forward(xv.data(), wv.data(), c_in, t, c_out, k, stride, padding, t_out);
        let out = Tensor::new(vec![c_out, t_out], out)?;
        Ok(self.custom(
            out,
            vec![input, weight],
            Box::new(move |g, p, _| {
                let (x, w) = (p[0].data(), p[1].data());
                let gx = conv_transpose_forward(g, w, c_out, t_out, c_in, k, stride, padding, t);
                let gw = conv_weight_grad(x, g, c_in, t, c_out, k, stride, padding, t_out);
                vec![Some(gx), Some(gw)]
            }),
        ))
    }

    /// Transposed convolution: the adjoint of [`Tape::conv1d`] with the same
    /// kernel. Input is `C_in × T`, weight `C_in × C_out × K`, output length
    /// `(T − 1)·stride − 2·padding + K`.
    pub fn conv_transpose1d(
        &mut self,
        input: Var,
        weight: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xv, wv) = (self.value(input), self.value(weight));
        let (c_in, t, wc_in, c_out, k) = conv_dims("conv_transpose1d", xv, wv)?;
        if wc_in != c_in {
            return Err(Error::shape(
                "conv_transpose1d",
                format!("input {:?} vs weight {:?}", xv.shape(), wv.shape()),
            ));
        }
        let t_out = conv_transpose1d_out_len(t, k, stride, padding).ok_or_else(|| {
            Error::shape(
                "conv_transpose1d",
                format!("padding {padding} too large for input {:?} and kernel {k}", xv.shape()),
            )
        })?;
        let out = conv_transpose_forward(xv.data(), wv.data(), c_in, t, c_out, k, stride, padding, t_out);
        let out = Tensor::new(vec![c_out, t_out], out)?;
        Ok(self.custom(
            out,
            vec![input, weight],
            Box::new(move |g, p, _| {
                let (x, w) = (p[0].data(), p[1].data());
                // adjoint of the adjoint is the forward correlation
                let gx = conv_forward(g, w, c_out, t_out, c_in, k, stride, padding, t);
                // weight gradient of convT(x) equals that of conv(g) seen from x
                let gw = conv_weight_grad(g, x, c_out, t_out, c_in, k, stride, padding, t);
                vec![Some(gx), Some(gw)]
            }),
        ))
    }
}

// Row-major `m × n` views with explicit strides, multiplied with
// `c = a·b + beta·c`.
struct View<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

fn gemm(m: usize, kd: usize, n: usize, a: View, b: View, c: &mut [f64]) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every view covers its m × kd / kd × n extent by construction
    // at the call sites, and `c` holds m × n contiguous elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            kd,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// Valid output positions `tt` for tap `kk`: 0 ≤ tt·s + kk − p < t_in.
fn tap_range(kk: usize, s: usize, p: usize, t_in: usize, t_out: usize) -> (usize, usize) {
    let lo = if kk >= p { 0 } else { (p - kk).div_ceil(s) };
    let hi = if t_in + p > kk { ((t_in + p - kk - 1) / s + 1).min(t_out) } else { 0 };
    (lo, hi.max(lo))
}

// col[(i·k + kk)][tt] = x[i][tt·s + kk − p], zero outside the signal.
#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], c_in: usize, t_in: usize, k: usize, s: usize, p: usize, t_out: usize) -> Vec<f64> {
    let mut col = vec![0.0; c_in * k * t_out];
    for i in 0..c_in {
        let xrow = &x[i * t_in..(i + 1) * t_in];
        for kk in 0..k {
            let dst = &mut col[(i * k + kk) * t_out..(i * k + kk + 1) * t_out];
            let (lo, hi) = tap_range(kk, s, p, t_in, t_out);
            for tt in lo..hi {
                dst[tt] = xrow[tt * s + kk - p];
            }
        }
    }
    col
}

// Adjoint of `im2col`: scatters columns back onto a `c × t_in` signal.
#[allow(clippy::too_many_arguments)]
fn col2im(col: &[f64], c: usize, t_in: usize, k: usize, s: usize, p: usize, t_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; c * t_in];
    for i in 0..c {
        let yrow = &mut y[i * t_in..(i + 1) * t_in];
        for kk in 0..k {
            let src = &col[(i * k + kk) * t_out..(i * k + kk + 1) * t_out];
            let (lo, hi) = tap_range(kk, s, p, t_in, t_out);
            for tt in lo..hi {
                yrow[tt * s + kk - p] += src[tt];
            }
        }
    }
    y
}

// out[o][t] = Σ_i Σ_k w[o][i][k] · x[i][t·s + k − p]
#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    w: &[f64],
    c_in: usize,
    t_in: usize,
    c_out: usize,
    k: usize,
    s: usize,
    p: usize,
    t_out: usize,
) -> Vec<f64> {
    let col = im2col(x, c_in, t_in, k, s, p, t_out);
    let ck = c_in * k;
    let mut out = vec![0.0; c_out * t_out];
    gemm(
        c_out,
        ck,
        t_out,
        View { data: w, rs: ck as isize, cs: 1 },
        View { data: &col, rs: t_out as isize, cs: 1 },
        &mut out,
    );
    out
}

// Adjoint of `conv_forward` in x: input `c_a × t_a`, weight `c_a × c_b × k`,
// output `c_b × t_b`.
#[allow(clippy::too_many_arguments)]
fn conv_transpose_forward(
    x: &[f64],
    w: &[f64],
    c_a: usize,
    t_a: usize,
    c_b: usize,
    k: usize,
    s: usize,
    p: usize,
    t_b: usize,
) -> Vec<f64> {
    let ck = c_b * k;
    let mut col = vec![0.0; ck * t_a];
    // col = wᵀ · x
    gemm(
        ck,
        c_a,
        t_a,
        View { data: w, rs: 1, cs: ck as isize },
        View { data: x, rs: t_a as isize, cs: 1 },
        &mut col,
    );
    col2im(&col, c_b, t_b, k, s, p, t_a)
}

// gw[o][i][k] = Σ_t g[o][t] · x[i][t·s + k − p]
#[allow(clippy::too_many_arguments)]
fn conv_weight_grad(
    x: &[f64],
    g: &[f64],
    c_in: usize,
    t_in: usize,
    c_out: usize,
    k: usize,
    s: usize,
    p: usize,
    t_out: usize,
) -> Vec<f64> {
    let col = im2col(x, c_in, t_in, k, s, p, t_out);
    let ck = c_in * k;
    let mut gw = vec![0.0; c_out * ck];
    gemm(
        c_out,
        t_out,
        ck,
        View { data: g, rs: t_out as isize, cs: 1 },
        View { data: &col, rs: 1, cs: t_out as isize },
        &mut gw,
    );
    gw
}
