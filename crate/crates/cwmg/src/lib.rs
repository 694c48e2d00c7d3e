//! Compound-word music modeling: tokenize symbolic music into per-type token
//! words, train a causal linear-attention transformer with one output head per
//! token type, and generate new pieces with type-conditioned nucleus sampling.
//!
//! The crate is organized along the pipeline:
//!
//! - [`numerics`]: dense arrays with tape-based reverse-mode differentiation,
//!   an adaptive-moment optimizer, and a finite-difference gradient checker.
//! - [`vocab`]: the eight token types, their closed-form tables, and
//!   compound-word validation.
//! - [`tokenizer`]: Standard MIDI File codec, chord detection, the
//!   note-events ↔ compound-words codec, piano-roll rendering, corpus I/O.
//! - [`model`]: per-type embeddings, the causal linear-attention stack,
//!   per-type output heads, and the checkpoint format.
//! - [`training`]: teacher-forced per-type losses, the epoch loop, loss
//!   reporting.
//! - [`sampling`]: per-type nucleus sampling and autoregressive generation.
//! - [`cli`]: the `cwmg` command-line tool built from the above.

pub mod cli;
pub mod error;
pub mod model;
pub mod numerics;
pub mod sampling;
pub mod tokenizer;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
