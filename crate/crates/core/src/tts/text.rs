use crate::error::{Error, Result};
use crate::objectives::{char_to_id, id_to_char, normalize, VOCAB_SIZE};
use crate::tensor::Tensor;

/// Character ids for the LM text span; shares the CTC alphabet, so ids are
/// in `1..VOCAB_SIZE`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextIds {
    pub ids: Vec<usize>,
    /// Characters dropped during normalization.
    pub dropped: usize,
}

impl TextIds {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn text(&self) -> String {
        self.ids.iter().filter_map(|&i| id_to_char(i)).collect()
    }
}

pub fn text_tokenize(text: &str) -> Result<TextIds> {
    let (norm, dropped) = normalize(text);
    if norm.is_empty() {
        return Err(Error::Config(format!("text {text:?} is empty after normalization")));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} unsupported character(s) from {text:?}");
    }
    let ids = norm.chars().map(|c| char_to_id(c).expect("normalized")).collect();
    Ok(TextIds { ids, dropped })
}

pub const TEXT_VOCAB: usize = VOCAB_SIZE;

/// `len × dim` sinusoidal position table: even columns `sin(p·ω_i)`, odd
/// columns `cos(p·ω_i)` with `ω_i = 10000^(−2i/dim)`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * dim);
    for p in 0..len {
        for j in 0..dim {
            let w = 10000f64.powf(-((j / 2) as f64 * 2.0) / dim as f64);
            let a = p as f64 * w;
            data.push(if j % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Tensor::new(vec![len, dim], data).expect("sized")
}
