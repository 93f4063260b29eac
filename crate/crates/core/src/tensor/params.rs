use std::collections::BTreeMap;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Ordered collection of named learnable tensors.
///
/// Insertion order is preserved so iteration, checkpoints and optimizer
/// state line up deterministically.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

/// Tape handles for one binding of a [`Params`] set.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("parameter '{name}' was never registered"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.tensors[i] = t.with_requires_grad(true);
            return;
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t.with_requires_grad(true));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Pushes every tensor onto the tape. With `trainable == false` they
    /// enter as constants and receive no gradient.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                let mut v = t.clone();
                v.zero_grad();
                if trainable {
                    tape.leaf(v.with_requires_grad(true))
                } else {
                    tape.constant(v)
                }
            })
            .collect();
        Bound {
            vars,
            index: self.index.clone(),
        }
    }

    /// A binding over vars the caller already placed on a tape, one per
    /// tensor in insertion order.
    pub fn bound_from_vars(&self, vars: &[Var]) -> Result<Bound> {
        if vars.len() != self.tensors.len() {
            return Err(Error::shape(
                "bound_from_vars",
                format!("{} vars for {} parameters", vars.len(), self.tensors.len()),
            ));
        }
        Ok(Bound {
            vars: vars.to_vec(),
            index: self.index.clone(),
        })
    }

    /// Tensor values in insertion order.
    pub fn values(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| t.clone().with_requires_grad(false)).collect()
    }

    /// Adds the tape's gradients for a binding into each tensor's grad.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &Bound) {
        for (t, &v) in self.tensors.iter_mut().zip(&bound.vars) {
            match tape.grad(v) {
                Some(g) => t.accumulate_grad(g),
                None if t.grad().is_none() => t.accumulate_grad(&vec![0.0; t.numel()]),
                None => {}
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Scales every populated gradient.
    pub fn scale_grads(&mut self, c: f64) {
        for t in &mut self.tensors {
            if let Some(g) = t.grad() {
                let g: Vec<f64> = g.iter().map(|x| x * c).collect();
                t.set_grad(g).expect("same length");
            }
        }
    }

    pub fn merge_prefixed(&mut self, prefix: &str, other: &Params) {
        for (n, t) in other.iter() {
            self.insert(format!("{prefix}{n}"), t.clone());
        }
    }

    /// Entries whose names begin with `prefix`, prefix removed.
    pub fn extract_prefixed(&self, prefix: &str) -> Params {
        let mut out = Params::new();
        for (n, t) in self.iter() {
            if let Some(rest) = n.strip_prefix(prefix) {
                out.insert(rest, t.clone());
            }
        }
        out
    }

    /// Copies values from `src`; names and shapes must match exactly.
    pub fn load_from(&mut self, src: &Params) -> Result<()> {
        let mut problems = Vec::new();
        for (name, t) in self.tensors_mut() {
            match src.get(name) {
                Some(s) if s.shape() == t.shape() => t.data_mut().copy_from_slice(s.data()),
                Some(s) => problems.push(format!("{name}: shape {:?} vs {:?}", s.shape(), t.shape())),
                None => problems.push(format!("{name}: missing")),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(problems.join(", ")))
        }
    }

    /// Bitwise equality of all values.
    pub fn bit_identical(&self, other: &Params) -> bool {
        self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
