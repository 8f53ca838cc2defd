//! Dense-tensor engine: tensors, tape autograd, init schemes, Adam.

pub mod adam;
pub mod graph;
pub mod init;
pub mod rng;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Gradients, Graph, NodeId};
pub use init::{init, InitScheme};
pub use tensor::{Scalar, Tensor};
