//! Dense tensors and reverse-mode differentiation.

pub mod checkpoint;
mod graph;
mod params;
mod tensor;

pub use graph::{Axis, Graph, Mode, Var};
pub use params::{Gradients, ParamId, ParamSet};
pub use tensor::Tensor;
