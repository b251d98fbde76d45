//! Dense `f64` tensors with a reverse-mode tape and a finite-difference oracle.

mod gradcheck;
mod kernels;
mod params;
mod tape;
mod value;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, ParamCheck};
pub use params::{BoundParams, ParamId, ParamSet};
pub use tape::{ActivationKind, BinaryKind, Gradients, ReduceKind, Tape, Var};
pub use value::Tensor;

pub use kernels::sigmoid;
