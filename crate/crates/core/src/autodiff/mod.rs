//! Dense-tensor computation graphs with symbolic (graph-producing)
//! differentiation and numeric reverse-mode gradients.
//!
//! [`Graph::derive`] returns new graph nodes, so input-Jacobians of a network
//! remain differentiable with respect to its parameters. [`Graph::backward`]
//! then computes parameter gradients of losses built from those Jacobians.

mod check;
mod derive;
mod graph;
mod tensor;
mod var;

pub use check::finite_difference_check;
pub use graph::{Axis, Bindings, GradientMap, Graph, NodeId, Op, Reduce, Values};
pub use tensor::{broadcast_shape, DenseTensor};
pub use var::{GraphBuilder, Var};
