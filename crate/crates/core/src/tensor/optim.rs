use super::{Params, Tensor};
use crate::error::{Error, Result};

fn require_grads(params: &Params) -> Result<()> {
    match params.iter().find(|(_, t)| t.grad().is_none()) {
        Some((name, _)) => Err(Error::MissingGrad(name.to_string())),
        None => Ok(()),
    }
}

/// Plain gradient descent, in place.
pub fn sgd_step(params: &mut Params, lr: f64) -> Result<()> {
    require_grads(params)?;
    for (_, t) in params.tensors_mut() {
        let g = t.grad().expect("checked").to_vec();
        t.data_mut().iter_mut().zip(&g).for_each(|(p, g)| *p -= lr * g);
    }
    Ok(())
}

/// Rescales the combined gradient of several parameter sets so its global
/// L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(sets: &mut [&mut Params], max_norm: f64) -> f64 {
    let sq: f64 = sets
        .iter()
        .flat_map(|p| p.iter())
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let c = max_norm / norm;
        for p in sets.iter_mut() {
            p.scale_grads(c);
        }
    }
    norm
}

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first and second moments plus the step counter for one
/// parameter group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            v: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
        }
    }

    /// Moments as named tensors, for checkpointing.
    pub fn to_tensors(&self, params: &Params, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, (name, t)) in params.iter().enumerate() {
            let shape = t.shape().to_vec();
            out.push((
                format!("{prefix}m.{name}"),
                Tensor::new(shape.clone(), self.m[i].clone()).expect("shape"),
            ));
            out.push((
                format!("{prefix}v.{name}"),
                Tensor::new(shape, self.v[i].clone()).expect("shape"),
            ));
        }
        out
    }

    pub fn from_tensors(
        params: &Params,
        prefix: &str,
        step: u64,
        lookup: impl Fn(&str) -> Option<Tensor>,
    ) -> Result<Self> {
        let mut st = Self::new(params);
        st.step = step;
        for (i, (name, t)) in params.iter().enumerate() {
            for (which, dst) in [("m", &mut st.m[i]), ("v", &mut st.v[i])] {
                let key = format!("{prefix}{which}.{name}");
                let src = lookup(&key).ok_or_else(|| Error::Checkpoint(format!("missing {key}")))?;
                if src.numel() != t.numel() {
                    return Err(Error::Checkpoint(format!("{key}: wrong size")));
                }
                dst.copy_from_slice(src.data());
            }
        }
        Ok(st)
    }
}

impl Adam {
    pub fn step(&self, state: &mut AdamState, params: &mut Params, lr: f64) -> Result<()> {
        require_grads(params)?;
        if state.m.len() != params.len() {
            return Err(Error::shape("adam", "optimizer state does not match parameter set"));
        }
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (_, p)) in params.tensors_mut().enumerate() {
            let g = p.grad().expect("checked").to_vec();
            let (m, v) = (&mut state.m[i], &mut state.v[i]);
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *x -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(p: f64, g: f64) -> Params {
        let mut ps = Params::new();
        ps.insert("p", Tensor::scalar(p));
        ps.get_mut("p").unwrap().set_grad(vec![g]).unwrap();
        ps
    }

    #[test]
    fn sgd_scalar() {
        let mut ps = one(1.0, 1.0);
        sgd_step(&mut ps, 0.1).unwrap();
        assert!((ps.get("p").unwrap().item() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut ps = one(1.0, 3.0);
        sgd_step(&mut ps, 0.0).unwrap();
        assert_eq!(ps.get("p").unwrap().item(), 1.0);
        let mut st = AdamState::new(&ps);
        Adam::default().step(&mut st, &mut ps, 0.0).unwrap();
        assert_eq!(ps.get("p").unwrap().item(), 1.0);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // after one step m̂ = g and v̂ = g², so Δ = −lr·g/(|g| + ε)
        for &g in &[0.3, -7.0, 1e-3] {
            let mut ps = one(0.5, g);
            let mut st = AdamState::new(&ps);
            Adam::default().step(&mut st, &mut ps, 0.01).unwrap();
            let delta = ps.get("p").unwrap().item() - 0.5;
            let want = -0.01 * g / (g.abs() + 1e-8);
            assert!((delta - want).abs() < 1e-12, "g={g}: {delta} vs {want}");
        }
    }

    #[test]
    fn missing_grad_is_explicit() {
        let mut ps = Params::new();
        ps.insert("w", Tensor::scalar(1.0));
        let err = sgd_step(&mut ps, 0.1).unwrap_err();
        assert!(matches!(err, Error::MissingGrad(n) if n == "w"));
    }
}
