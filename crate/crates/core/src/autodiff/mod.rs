//! Minimal reverse-mode automatic differentiation covering exactly the
//! operators the encoder/decoder network needs, plus Adam and a
//! finite-difference checker.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
pub use graph::{Activation, Gradients, Graph, Var};
pub use tensor::{Scalar, Tensor};

#[cfg(test)]
mod tests;
