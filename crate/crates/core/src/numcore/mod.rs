//! Tensors, reverse-mode differentiation and the adaptive-moment optimizer.

mod graph;
mod optim;
mod scalar;
mod tensor;

pub use graph::{Gradients, Graph, NodeId};
pub use optim::{Adam, AdamConfig, ParamSet};
pub use scalar::Scalar;
pub use tensor::Tensor;
