//! Continuous and discrete speech tokenizers trained on a small
//! reverse-mode autodiff engine, a continuous-token TTS language model, and
//! the measurement apparatus used to compare how much of the input spectrum
//! each tokenizer keeps.

pub mod dsp;
pub mod error;
pub mod gradsuite;
pub mod rng;
pub mod lab;
pub mod objectives;
pub mod pipeline;
pub mod tensor;
pub mod tokenizer;
pub mod tts;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/autodiff.md")]
    struct Autodiff;
    #[doc = include_str!("../../../book/src/dsp.md")]
    struct Dsp;
    #[doc = include_str!("../../../book/src/tokenizers.md")]
    struct Tokenizers;
    #[doc = include_str!("../../../book/src/objectives.md")]
    struct Objectives;
    #[doc = include_str!("../../../book/src/tts.md")]
    struct Tts;
    #[doc = include_str!("../../../book/src/pipeline.md")]
    struct Pipeline;
    #[doc = include_str!("../../../book/src/checkpoint-format.md")]
    struct CheckpointFormat;
    #[doc = include_str!("../../../book/src/analysis.md")]
    struct Analysis;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
