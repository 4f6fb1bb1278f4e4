//! Reverse-mode differentiation over a recorded list of tensor ops.

pub mod conv;
mod graph;

pub use graph::{Gradients, Graph, Var};

/// The graph doubles as the computation record of a forward pass.
pub type ComputationRecord = Graph;
