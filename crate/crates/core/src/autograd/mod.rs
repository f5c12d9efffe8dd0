//! Dense rank-2 tensors with tape-based reverse-mode differentiation.
//!
//! Every model in [`crate::models`] is written against [`Tape`]: parameters
//! live in a [`ParamStore`], a forward pass records onto a fresh tape, and
//! [`Tape::backward`] adds gradients into the store. Values are `f64`.

mod gradcheck;
mod optim;
mod params;
mod sparse;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use optim::Adam;
pub use params::{Init, ParamId, ParamStore, Parameter};
pub use sparse::CsrMatrix;
pub use tape::{Segments, Tape, Var, CE_EPS};
