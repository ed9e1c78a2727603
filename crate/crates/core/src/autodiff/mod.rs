//! Reverse-mode differentiation over [`Tensor`](crate::tensor::Tensor) values.

mod gradcheck;
mod norm;
mod tape;

pub use gradcheck::{grad_check, Discrepancy, GradCheckOptions, GradCheckReport};
pub use norm::{NormState, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM};
pub use tape::{Gradients, Tape, Var};

/// Normalization epsilon for 64-bit computation.
pub const NORM_EPS: f64 = 1e-12;
