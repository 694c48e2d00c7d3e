//! Minimal dense-array math with reverse-mode differentiation.
//!
//! Training and inference run in `f32`; the gradient checker runs the same
//! generic code in `f64` so the finite-difference oracle is trustworthy.
//! Everything here is single-threaded and deterministic: identical inputs
//! produce bit-identical outputs within one build.

mod adam;
mod array;
mod gradcheck;
mod tape;

pub use adam::{adam_step, clip_global_norm, AdamHyper, AdamState};
pub use array::{
    elu_plus_one, gelu, log_sum_exp, matmul, softmax, softmax_slice, Array, Real,
};
pub use gradcheck::grad_check;
pub use tape::{cross_entropy, Gradients, Tape, ValueId};
