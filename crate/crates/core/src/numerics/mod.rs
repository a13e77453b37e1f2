//! Array type, reverse-mode differentiation, and gradient verification.

mod gradcheck;
mod graph;
mod params;
mod real;
mod tensor;

pub use gradcheck::{finite_diff_check, FdOptions, FdReport, Objective, Stencil};
pub use graph::{Grads, Graph, Var};
pub use params::ParamSet;
pub use real::Real;
pub use tensor::{layernorm, matmul, softmax, Tensor};
