//! The causal linear-attention transformer.
//!
//! Per-type embeddings are concatenated to `d_model` and combined with
//! sinusoidal positional encoding; the stack is pre-norm residual blocks
//! whose attention runs the recurrent linear form; output heads predict the
//! family first and condition every remaining type on it.

mod checkpoint;
mod forward;
mod params;
mod state;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC,
};
pub use forward::{
    embed_sequence_on_tape, family_logits_on_tape, forward_hidden_on_tape, forward_on_tape,
    positional_encoding, register_params, rest_logits_on_tape, ParamIds,
};
pub use params::{param_count, HeadParams, LayerParams, TransformerParams, NON_FAMILY_TYPES};
pub use state::{family_logits, rest_logits, GenState};

use crate::error::{Error, Result};
use crate::vocab::TokenType;

/// Epsilon added to the linear-attention denominator.
pub const ATTN_EPS: f64 = 1e-6;
/// Epsilon inside layer-norm variance.
pub const LN_EPS: f64 = 1e-5;
/// Scale of the zero-mean normal used for weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Architecture hyperparameters. Learnable arrays live in
/// [`TransformerParams`]; their shapes are a pure function of this config
/// plus the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Per-type embedding widths in [`TokenType`] order; must sum to `d_model`.
    pub type_dims: [usize; TokenType::COUNT],
    pub ff_hidden: usize,
    pub head_hidden: usize,
    pub max_seq_len: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            d_model: 512,
            n_layers: 12,
            n_heads: 8,
            type_dims: [16, 64, 96, 64, 128, 64, 64, 16],
            ff_hidden: 2048,
            head_hidden: 256,
            max_seq_len: 2048,
        }
    }
}

impl TransformerConfig {
    /// Desk-scale configuration used by tests and quick experiments.
    pub fn toy() -> Self {
        TransformerConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            type_dims: [2, 8, 12, 8, 16, 8, 8, 2],
            ff_hidden: 128,
            head_hidden: 32,
            max_seq_len: 256,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn family_dim(&self) -> usize {
        self.type_dims[TokenType::Family.index()]
    }

    pub fn validate(&self) -> Result<()> {
        let sum: usize = self.type_dims.iter().sum();
        if sum != self.d_model {
            return Err(Error::dim(format!(
                "type embedding dims sum to {sum}, d_model is {}",
                self.d_model
            )));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::dim(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.type_dims.contains(&0) {
            return Err(Error::dim("every type embedding dim must be positive"));
        }
        if self.n_layers == 0 || self.ff_hidden == 0 || self.head_hidden == 0 || self.max_seq_len < 2 {
            return Err(Error::param("layers, hidden dims and max_seq_len must be positive"));
        }
        Ok(())
    }
}
