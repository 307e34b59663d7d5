//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! Values live on a [`Tape`]; each primitive records its output and what the
//! backward pass needs. [`Tape::backward`] walks the records in reverse and
//! accumulates gradients into every value created by [`Tape::param`] (and
//! anything derived from one).

pub mod gradcheck;
pub(crate) mod linalg;
mod tape;
mod tensor;

pub use tape::{sigmoid, smooth_l1, Padding, Tape, Var};
pub use tensor::Tensor;
