use serde::{Deserialize, Serialize};
use thiserror::Error;

use formula_distill_core::vocab::Vocab;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config: {0}")]
    Config(String),
    #[error("points have {got} input columns but the model takes at most {max}")]
    Dims { got: usize, max: usize },
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    Length { len: usize, max: usize },
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint vocabulary hash {found} does not match {expected}")]
    CheckpointMismatch { expected: String, found: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("corpus: {0}")]
    Corpus(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_blocks: usize,
    pub n_dec_layers: usize,
    pub n_inducing: usize,
    pub n_seed_vectors: usize,
    /// Hidden width of the decoder feed-forward blocks.
    pub d_ff: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    /// Input columns are `max_vars` variables plus the target.
    pub max_vars: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Opaque passthroughs kept for config compatibility; unused.
    pub n_p: usize,
    pub num_features: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_heads: 4,
            n_enc_blocks: 2,
            n_dec_layers: 4,
            n_inducing: 16,
            n_seed_vectors: 8,
            d_ff: 512,
            dropout: 0.0,
            max_seq_len: 512,
            vocab_size: Vocab::new().len(),
            max_vars: 2,
            lr: 1e-3,
            batch_size: 32,
            n_p: 0,
            num_features: 20,
        }
    }
}

impl ModelConfig {
    /// Large configuration: batch 128, 16 decoder layers, 512-wide encoder.
    pub fn paper_scale() -> Self {
        Self {
            d_model: 512,
            n_heads: 16,
            n_enc_blocks: 4,
            n_dec_layers: 16,
            n_inducing: 50,
            n_seed_vectors: 10,
            d_ff: 2048,
            max_seq_len: 2048,
            batch_size: 128,
            lr: 1e-4,
            ..Self::default()
        }
    }

    /// Tiny configuration for numerical checks.
    pub fn tiny() -> Self {
        Self {
            d_model: 8,
            n_heads: 1,
            n_enc_blocks: 1,
            n_dec_layers: 1,
            n_inducing: 3,
            n_seed_vectors: 2,
            d_ff: 16,
            max_seq_len: 32,
            batch_size: 2,
            ..Self::default()
        }
    }

    pub fn input_dim(&self) -> usize {
        self.max_vars + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} must be a positive multiple of n_heads {}", self.d_model, self.n_heads));
        }
        if self.n_inducing == 0 || self.n_seed_vectors == 0 || self.d_ff == 0 {
            return bad("n_inducing, n_seed_vectors and d_ff must be positive".into());
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be at least 2".into());
        }
        if self.vocab_size != Vocab::new().len() {
            return bad(format!("vocab_size must be {}", Vocab::new().len()));
        }
        if self.max_vars == 0 || self.max_vars > 9 {
            return bad("max_vars must lie in 1..=9".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 {
            return bad("lr and batch_size must be positive".into());
        }
        Ok(())
    }
}
