//! Differentiable predictive control for multi-zone buildings.
//!
//! The pipeline has two learning steps. A block-structured neural
//! state-space model is identified from emulator data ([`dynamics`]); an
//! explicit control law is then trained by backpropagating an economic
//! objective through the frozen model over sampled scenarios ([`policy`]).
//! [`harness`] wires both steps to files and evaluates the law in closed
//! loop on the learned model and on the emulator ([`plant`]).

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod blocks;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod plant;
pub mod policy;

pub use error::{Error, Result};
