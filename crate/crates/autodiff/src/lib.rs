//! Dense `f64` tensors with define-by-run reverse-mode differentiation.
//!
//! Build a fresh [`Tape`] per step, bind parameters with [`Params::bind`],
//! compose primitives, then call [`Tape::backward`] on a scalar loss.
//! Broadcasting is limited to leading-batch expansion: the second operand of
//! an elementwise op may match a trailing slice of the first operand's shape.

mod error;
pub mod fft;
pub mod gradcheck;
mod kernels;
mod ops;
mod params;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{check_gradient, finite_difference_check, numeric_gradient, relative_error};
pub use params::{Binding, Params};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;
