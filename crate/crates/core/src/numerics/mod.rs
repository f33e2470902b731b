//! Dense tensors, reverse-mode differentiation and a finite-difference oracle.

mod gradcheck;
pub(crate) mod kernels;
mod rng;
mod sparse;
mod tensor;
mod var;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use rng::{Rng, RngState};
pub use sparse::SparseMatrix;
pub use tensor::Tensor;
pub use var::Var;
