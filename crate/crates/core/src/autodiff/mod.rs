//! Minimal reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! The primitive set is exactly what the emotion classifier needs:
//! convolution, ReLU, batch norm, LSTM cells, dense layers, dropout, softmax
//! and binary cross-entropy. Gradients with respect to the network input are
//! always available, which is what Integrated Gradients relies on.

mod gradcheck;
pub mod kernels;
mod layers;
mod params;
mod tape;

pub use gradcheck::grad_check;
pub use layers::{dense, lstm_step, LstmWeights};
pub use params::{BoundParams, Parameter, ParameterStore};
pub use tape::{bce_loss, sigmoid, BatchNormState, Gradients, Tape, Var, BCE_EPS};
