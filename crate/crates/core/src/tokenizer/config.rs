use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Gelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    Continuous,
    Discrete,
}

impl TokenizerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenizerMode::Continuous => "continuous",
            TokenizerMode::Discrete => "discrete",
        }
    }
}

impl std::str::FromStr for TokenizerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(TokenizerMode::Continuous),
            "discrete" => Ok(TokenizerMode::Discrete),
            _ => Err(Error::Config(format!("unknown tokenizer mode '{s}'"))),
        }
    }
}

/// Embedding head after the conv stack. Only the deterministic linear
/// head exists today; a variational head would add a variant here.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Deterministic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub sample_rate: u32,
    /// Output channels of each conv stage.
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    /// Kernel size of each stage; empty means `s + 2·⌊s/2⌋` for stride `s`.
    pub kernels: Vec<usize>,
    pub token_dim: usize,
    pub activation: Activation,
    pub head: HeadKind,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            sample_rate: 24_000,
            channels: vec![16, 32, 64, 64],
            strides: vec![2, 4, 5, 4],
            kernels: vec![],
            token_dim: 64,
            activation: Activation::Tanh,
            head: HeadKind::Deterministic,
        }
    }
}

impl EncoderConfig {
    pub fn downsample_factor(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn token_rate_hz(&self) -> f64 {
        self.sample_rate as f64 / self.downsample_factor() as f64
    }

    pub fn kernel(&self, stage: usize) -> usize {
        match self.kernels.get(stage) {
            Some(&k) => k,
            None => {
                let s = self.strides[stage];
                s + 2 * (s / 2)
            }
        }
    }

    /// Padding that makes each stage map `T` to `⌊T/s⌋` given kernel `K`.
    pub fn padding(&self, stage: usize) -> usize {
        let (k, s) = (self.kernel(stage), self.strides[stage]);
        k.saturating_sub(s) / 2
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.strides.is_empty() {
            errs.push("encoder.strides must not be empty".to_string());
        }
        if self.channels.len() != self.strides.len() {
            errs.push(format!(
                "encoder.channels has {} stages but encoder.strides has {}",
                self.channels.len(),
                self.strides.len()
            ));
        }
        if !self.kernels.is_empty() && self.kernels.len() != self.strides.len() {
            errs.push("encoder.kernels must be empty or one per stage".to_string());
        }
        if self.strides.iter().any(|&s| s == 0) || self.channels.iter().any(|&c| c == 0) {
            errs.push("encoder strides and channels must be positive".to_string());
        }
        if self.token_dim == 0 {
            errs.push("encoder.token_dim must be positive".to_string());
        }
        if self.sample_rate == 0 {
            errs.push("encoder.sample_rate must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Schema(errs))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RvqConfig {
    pub num_quantizers: usize,
    pub codebook_size: usize,
    pub ema_decay: f64,
    pub eps: f64,
    pub commitment_weight: f64,
    /// Entries whose EMA count stays below this over an epoch are reseeded.
    pub dead_threshold: f64,
}

impl Default for RvqConfig {
    fn default() -> Self {
        Self {
            num_quantizers: 8,
            codebook_size: 256,
            ema_decay: 0.99,
            eps: 1e-5,
            commitment_weight: 0.25,
            dead_threshold: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerConfig {
    pub mode: TokenizerMode,
    pub encoder: EncoderConfig,
    pub rvq: RvqConfig,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            mode: TokenizerMode::Continuous,
            encoder: EncoderConfig::default(),
            rvq: RvqConfig::default(),
        }
    }
}
