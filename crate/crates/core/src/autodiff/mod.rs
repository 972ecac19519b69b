//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod backward;
mod gradcheck;
pub mod ops;
mod tensor;

pub use backward::{backward, GradMap};
pub use gradcheck::{grad_check, grad_check_inputs, relative_error, GradCheckReport};
pub use tensor::{is_grad_enabled, no_grad, Tensor};
