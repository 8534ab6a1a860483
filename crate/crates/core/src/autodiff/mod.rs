//! Dense tensors, a reverse-mode tape, Adam and a finite-difference checker.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, grad_check_model, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{scalar, Gradients, Graph, Var, GELU_CUBIC, GELU_SQRT_2_OVER_PI};
pub use tensor::Tensor;
