//! Minimal dense-tensor layer: forward kernels, reverse-mode gradients on a
//! define-by-run tape, finite-difference verification, and a small binary
//! serialization format.
//!
//! All kernels are deterministic; with the default `parallel` feature the
//! heavy loops fan out over rayon while keeping bit-identical results.

#![forbid(unsafe_code)]

pub mod error;
pub mod gradcheck;
pub mod io;
pub mod kernels;
mod parallel;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_against, grad_check_multi};
pub use kernels::{Activation, Conv2dOpts};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{max_abs_diff, DType, Element, Tensor};
