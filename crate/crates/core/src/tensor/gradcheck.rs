//! Central finite-difference gradient checking.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of one check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    /// Worst over inputs of ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖).
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub coords_checked: usize,
}

impl GradCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares the tape's gradient of `f` at `inputs` with central differences.
///
/// `max_coords` bounds the number of perturbed coordinates per input; they
/// are spread evenly over the tensor.
pub fn check<F>(
    name: &str,
    inputs: &[Tensor],
    h: f64,
    max_coords: Option<usize>,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let l = f(&mut tape, &vars)?;
        Ok(tape.value(l).item())
    };

    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut coords_checked = 0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        let n = t.numel();
        let coords: Vec<usize> = match max_coords {
            Some(m) if m < n => (0..m).map(|j| j * n / m).collect(),
            _ => (0..n).collect(),
        };
        let (mut diff_sq, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
        for &c in &coords {
            let orig = t.data()[c];
            work[i].data_mut()[c] = orig + h;
            let fp = eval(&work)?;
            work[i].data_mut()[c] = orig - h;
            let fm = eval(&work)?;
            work[i].data_mut()[c] = orig;
            let num = (fp - fm) / (2.0 * h);
            let ana = analytic[i][c];
            diff_sq += (ana - num) * (ana - num);
            a_sq += ana * ana;
            n_sq += num * num;
            max_abs = max_abs.max((ana - num).abs());
        }
        coords_checked += coords.len();
        let denom = a_sq.sqrt().max(n_sq.sqrt());
        let rel = if denom < 1e-12 { diff_sq.sqrt() } else { diff_sq.sqrt() / denom };
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        coords_checked,
    })
}
