//! Minimal reverse-mode differentiation: tensors, a define-by-run tape,
//! primitive VJPs and a finite-difference checker.

mod gradcheck;
mod nn;
mod ops;
mod real;
mod tape;
mod tensor;

pub use gradcheck::{rel_err, GradCheck, GradCheckReport};
pub use ops::{cross_entropy, softmax};
pub use real::Real;
pub use tape::{Graph, Op, Var};
pub use tensor::Tensor;
