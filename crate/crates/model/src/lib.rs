//! Data-conditioned sequence model over search histories: a set encoder over
//! observations, a causal decoder over expression and reward tokens, its
//! training loop, checkpoints, and the reward-spliced inference loop.

pub mod checkpoint;
pub mod config;
pub mod inference;
pub mod model;
pub mod nn;
pub mod train;

pub use config::{ModelConfig, ModelError};
pub use model::SeqModel;
