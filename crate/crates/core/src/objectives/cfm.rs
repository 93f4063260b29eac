//! Optimal-transport conditional flow matching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Bound, Params, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Euler,
    Midpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfmConfig {
    pub sigma_min: f64,
    pub ode_steps: usize,
    pub solver: Solver,
}

impl Default for CfmConfig {
    fn default() -> Self {
        Self {
            sigma_min: 1e-4,
            ode_steps: 32,
            solver: Solver::Euler,
        }
    }
}

impl CfmConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(0.0..1.0).contains(&self.sigma_min) {
            errs.push(format!("cfm.sigma_min must be in [0, 1), got {}", self.sigma_min));
        }
        if self.ode_steps == 0 {
            errs.push("cfm.ode_steps must be at least 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Schema(errs))
        }
    }
}

/// Point on the straight path from `x0` to `x1` and its target velocity:
/// `x_t = (1 − (1−σ)t)·x0 + t·x1`, `u = x1 − (1−σ)·x0`.
pub fn cfm_sample_path(x0: &Tensor, x1: &Tensor, t: f64, sigma_min: f64) -> Result<(Tensor, Tensor)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("path time {t} outside [0, 1]")));
    }
    if x0.shape() != x1.shape() {
        return Err(Error::shape("cfm_sample_path", format!("{:?} vs {:?}", x0.shape(), x1.shape())));
    }
    let a = 1.0 - (1.0 - sigma_min) * t;
    let xt = x0.data().iter().zip(x1.data()).map(|(p, q)| a * p + t * q).collect();
    let u = x0.data().iter().zip(x1.data()).map(|(p, q)| q - (1.0 - sigma_min) * p).collect();
    Ok((Tensor::new(x0.shape().to_vec(), xt)?, Tensor::new(x0.shape().to_vec(), u)?))
}

/// A velocity field `v(x, t, cond)` evaluated row-wise on a tape.
///
/// `x` is `B × d`, `t` is `B × 1` and `cond` is `B × c`.
pub trait VectorField {
    fn eval(&self, tape: &mut Tape, x: Var, t: Var, cond: Var) -> Result<Var>;
}

/// Closure-backed field, constant with respect to the tape.
pub struct FnField<F>(pub F);

impl<F> VectorField for FnField<F>
where
    F: Fn(&Tensor, &[f64], &Tensor) -> Tensor,
{
    fn eval(&self, tape: &mut Tape, x: Var, t: Var, cond: Var) -> Result<Var> {
        let v = (self.0)(tape.value(x), tape.value(t).data(), tape.value(cond));
        Ok(tape.constant(v))
    }
}

/// Three-layer tanh MLP over `[x ‖ t ‖ cond]`.
#[derive(Clone, Debug)]
pub struct FieldNet {
    pub params: Params,
    pub dim: usize,
    pub cond_dim: usize,
    pub hidden: usize,
}

impl FieldNet {
    pub fn new(dim: usize, cond_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut params = Params::new();
        let inp = dim + 1 + cond_dim;
        params.insert("l0.w", Tensor::randn(&[inp, hidden], (1.0 / inp as f64).sqrt(), rng));
        params.insert("l0.b", Tensor::zeros(&[hidden]));
        params.insert("l1.w", Tensor::randn(&[hidden, hidden], (1.0 / hidden as f64).sqrt(), rng));
        params.insert("l1.b", Tensor::zeros(&[hidden]));
        params.insert("l2.w", Tensor::randn(&[hidden, dim], (1.0 / hidden as f64).sqrt(), rng));
        params.insert("l2.b", Tensor::zeros(&[dim]));
        Self {
            params,
            dim,
            cond_dim,
            hidden,
        }
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape, trainable: bool) -> BoundField<'a> {
        BoundField {
            bound: self.params.bind(tape, trainable),
            net: self,
        }
    }
}

/// Frozen evaluation: the weights are placed on whichever tape the caller
/// integrates with, so this is the form to hand to [`cfm_integrate`].
impl VectorField for FieldNet {
    fn eval(&self, tape: &mut Tape, x: Var, t: Var, cond: Var) -> Result<Var> {
        self.bind(tape, false).eval(tape, x, t, cond)
    }
}

/// A [`FieldNet`] bound onto one tape. Only valid on that tape, so use it
/// for training losses, not for integration.
pub struct BoundField<'a> {
    pub net: &'a FieldNet,
    pub bound: Bound,
}

impl VectorField for BoundField<'_> {
    fn eval(&self, tape: &mut Tape, x: Var, t: Var, cond: Var) -> Result<Var> {
        let p = &self.bound;
        let inp = tape.concat_cols(&[x, t, cond])?;
        let h = tape.linear(inp, p.get("l0.w"), p.get("l0.b"))?;
        let h = tape.tanh(h)?;
        let h = tape.linear(h, p.get("l1.w"), p.get("l1.b"))?;
        let h = tape.tanh(h)?;
        tape.linear(h, p.get("l2.w"), p.get("l2.b"))
    }
}

/// Single-sample Monte Carlo estimate of `E‖v(x_t, t, cond) − u‖²`, one
/// `(t, x0)` draw per row, averaged over rows.
pub fn cfm_loss(
    tape: &mut Tape,
    field: &dyn VectorField,
    x1: &Tensor,
    cond: &Tensor,
    sigma_min: f64,
    rng: &mut Rng,
) -> Result<Var> {
    let (b, d) = (x1.rows(), x1.cols());
    if cond.rows() != b {
        return Err(Error::shape("cfm_loss", format!("{b} targets vs {} conditions", cond.rows())));
    }
    if b == 0 {
        return Err(Error::shape("cfm_loss", "empty batch"));
    }
    let mut xt = Vec::with_capacity(b * d);
    let mut u = Vec::with_capacity(b * d);
    let mut ts = Vec::with_capacity(b);
    for r in 0..b {
        let t = rng.uniform();
        let x0 = Tensor::randn(&[1, d], 1.0, rng);
        let row = Tensor::matrix(1, d, x1.row(r).to_vec())?;
        let (p, target) = cfm_sample_path(&x0, &row, t, sigma_min)?;
        xt.extend_from_slice(p.data());
        u.extend_from_slice(target.data());
        ts.push(t);
    }
    let xv = tape.constant(Tensor::matrix(b, d, xt)?);
    let tv = tape.constant(Tensor::matrix(b, 1, ts)?);
    let cv = tape.constant(cond.clone());
    let uv = tape.constant(Tensor::matrix(b, d, u)?);
    let v = field.eval(tape, xv, tv, cv)?;
    let diff = tape.sub(v, uv)?;
    let sq = tape.mul(diff, diff)?;
    let s = tape.sum(sq)?;
    tape.scale(s, 1.0 / b as f64)
}

fn field_value(field: &dyn VectorField, x: &Tensor, t: f64, cond: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let tv = tape.constant(Tensor::full(&[x.rows(), 1], t));
    let cv = tape.constant(cond.clone());
    let v = field.eval(&mut tape, xv, tv, cv)?;
    Ok(tape.value(v).clone())
}

/// Integrates `dx/dt = v(x, t, cond)` over `[0, 1]` from `x0`.
pub fn cfm_integrate(field: &dyn VectorField, x0: Tensor, cond: &Tensor, cfg: &CfmConfig) -> Result<Tensor> {
    cfg.validate()?;
    let dt = 1.0 / cfg.ode_steps as f64;
    let mut x = x0;
    for step in 0..cfg.ode_steps {
        let t = step as f64 * dt;
        let v = match cfg.solver {
            Solver::Euler => field_value(field, &x, t, cond)?,
            Solver::Midpoint => {
                let k1 = field_value(field, &x, t, cond)?;
                let mid: Vec<f64> = x.data().iter().zip(k1.data()).map(|(a, b)| a + 0.5 * dt * b).collect();
                let mid = Tensor::new(x.shape().to_vec(), mid)?;
                field_value(field, &mid, t + 0.5 * dt, cond)?
            }
        };
        if v.shape() != x.shape() {
            return Err(Error::shape("cfm_generate", format!("field returned {:?} for state {:?}", v.shape(), x.shape())));
        }
        x.data_mut().iter_mut().zip(v.data()).for_each(|(a, b)| *a += dt * b);
        if !x.all_finite() {
            return Err(Error::Divergence {
                step,
                detail: "non-finite ODE state".into(),
            });
        }
    }
    Ok(x)
}

/// Draws `x0 ~ N(0, I)` of shape `rows × dim` and integrates to `t = 1`.
pub fn cfm_generate(
    field: &dyn VectorField,
    cond: &Tensor,
    shape: (usize, usize),
    cfg: &CfmConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    let x0 = Tensor::randn(&[shape.0, shape.1], 1.0, rng);
    cfm_integrate(field, x0, cond, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_closed_forms() {
        let x0 = Tensor::vector(vec![1.0, 0.0]);
        let x1 = Tensor::vector(vec![0.0, 1.0]);
        let (xt, u) = cfm_sample_path(&x0, &x1, 0.5, 0.0).unwrap();
        assert_eq!(xt.data(), &[0.5, 0.5]);
        assert_eq!(u.data(), &[-1.0, 1.0]);
        let (xt, _) = cfm_sample_path(&x0, &x1, 0.0, 0.0).unwrap();
        assert_eq!(xt, x0);
        let (xt, _) = cfm_sample_path(&x0, &x1, 1.0, 0.0).unwrap();
        assert_eq!(xt, x1);
        let z = Tensor::zeros(&[2]);
        let (xt, u) = cfm_sample_path(&z, &x1, 0.3, 0.0).unwrap();
        assert_eq!(xt.data(), &[0.0, 0.3]);
        assert_eq!(u, x1);
        assert!(cfm_sample_path(&x0, &x1, 1.1, 0.0).is_err());
    }

    #[test]
    fn constant_field_is_exact() {
        let c = vec![0.5, -2.0, 0.125];
        let cc = c.clone();
        let field = FnField(move |x: &Tensor, _: &[f64], _: &Tensor| {
            let data = (0..x.rows()).flat_map(|_| cc.iter().copied()).collect();
            Tensor::new(x.shape().to_vec(), data).unwrap()
        });
        let x0 = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        for steps in [1, 2, 4, 32] {
            let cfg = CfmConfig {
                ode_steps: steps,
                ..CfmConfig::default()
            };
            let x = cfm_integrate(&field, x0.clone(), &Tensor::zeros(&[1, 0]), &cfg).unwrap();
            for j in 0..3 {
                assert!((x.data()[j] - (x0.data()[j] + c[j])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn perfect_field_has_zero_loss() {
        let mut rng = Rng::new(8);
        let x1 = Tensor::randn(&[6, 3], 1.0, &mut rng);
        let x1c = x1.clone();
        let sigma = 1e-4;
        // recovers u from (x_t, t) given the known target row
        let field = FnField(move |x: &Tensor, t: &[f64], _: &Tensor| {
            let d = x.cols();
            let mut out = vec![0.0; x.numel()];
            for r in 0..x.rows() {
                let a = 1.0 - (1.0 - sigma) * t[r];
                for j in 0..d {
                    let x0 = (x.at2(r, j) - t[r] * x1c.at2(r, j)) / a;
                    out[r * d + j] = x1c.at2(r, j) - (1.0 - sigma) * x0;
                }
            }
            Tensor::new(x.shape().to_vec(), out).unwrap()
        });
        let mut tape = Tape::new();
        let l = cfm_loss(&mut tape, &field, &x1, &Tensor::zeros(&[6, 0]), sigma, &mut rng).unwrap();
        assert!(tape.value(l).item() < 1e-20);
    }

    #[test]
    fn divergence_names_step() {
        let field = FnField(|x: &Tensor, t: &[f64], _: &Tensor| {
            let v = if t[0] > 0.2 { f64::INFINITY } else { 0.0 };
            Tensor::full(x.shape(), v)
        });
        let cfg = CfmConfig {
            ode_steps: 10,
            ..CfmConfig::default()
        };
        match cfm_integrate(&field, Tensor::zeros(&[1, 2]), &Tensor::zeros(&[1, 0]), &cfg) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loss_is_seeded() {
        let net = FieldNet::new(2, 1, 8, &mut Rng::new(0));
        let x1 = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let cond = Tensor::zeros(&[3, 1]);
        let run = || {
            let mut tape = Tape::new();
            let f = net.bind(&mut tape, false);
            let l = cfm_loss(&mut tape, &f, &x1, &cond, 1e-4, &mut Rng::new(5)).unwrap();
            tape.value(l).item()
        };
        assert_eq!(run(), run());
    }
}
