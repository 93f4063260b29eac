//! Two-stage training orchestration, corpora, configuration and checkpoints.

mod checkpoint;
mod config;
mod corpus;
mod train;

pub use checkpoint::*;
pub use config::*;
pub use corpus::*;
pub use train::*;
