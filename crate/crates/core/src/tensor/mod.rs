//! Dense `f64` tensors, a recording tape with reverse-mode gradients,
//! finite-difference checking and Adam.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod value;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, DEFAULT_STEP};
pub use params::{ParamId, ParamStore};
pub use tape::{sigmoid, softplus, Gradients, Tape, Unary, Var, SEGSUM_EXP_CLAMP};
pub use value::Tensor;

#[cfg(test)]
mod tests;
