//! Landmark-based facial emotion classifiers with Integrated Gradients
//! landmark selection.

pub mod attribution;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod export;
pub mod model;
pub mod par;
pub mod reference;
pub mod selection;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
