//! Dense `f64` matrices with tape-based reverse-mode differentiation.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck, RELATIVE_FLOOR};
pub use params::{accumulate, ParamStore};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::{logsumexp, Tensor};
