//! Dense linear algebra with reverse-mode gradients and a finite-difference
//! checker.

mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use matrix::{dot, linear, softmax_rows, Matrix};
pub use params::{Gradients, ParamStore};
pub use tape::{activate, activate_grad, Activation, Tape, Var};
