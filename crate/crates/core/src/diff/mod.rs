//! Minimal reverse-mode automatic differentiation.

mod gradcheck;
mod optim;
mod params;
mod tape;

pub use gradcheck::{compare_gradients, gradcheck, relative_error, GradcheckConfig, GradcheckReport};
pub use optim::Adam;
pub use params::{ParamId, ParamStore, Real};
pub use tape::{overlap_ratio, sigmoid, softmax_into, softplus, softplus_inverse, Gradients, Tape, Var};
