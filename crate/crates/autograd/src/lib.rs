//! Dense `f64` tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is executed. Calling
//! [`Graph::backward`] on a scalar node replays the record in reverse
//! insertion order and accumulates gradients into every node that requires
//! them. Graphs are cheap to build and are meant to be thrown away after each
//! optimization step.
//!
//! [`finite_diff_check`] compares analytic gradients against central
//! differences and is used throughout the workspace as an independent oracle.

mod check;
mod error;
mod graph;
mod kernels;
mod tensor;

pub use check::{finite_diff_check, finite_diff_check_coords, numeric_gradient};
pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use kernels::gemm;
pub use tensor::Tensor;
