//! Numeric substrate: tensors, the autodiff graph, AdamW and grad checks.

mod adamw;
pub mod gradcheck;
mod graph;
mod tensor;

pub use adamw::{adamw_step, AdamWHyper, AdamWState};
pub use graph::{Graph, NodeId, Op, LOG_EPS};
pub use tensor::Tensor;
