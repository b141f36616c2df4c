//! Dense feed-forward networks, activations, parameter flattening, and the
//! reverse-mode differentiation facility used by the training objective.

mod graph;
mod gradcheck;
mod mlp;
mod params;

pub use gradcheck::{finite_difference_gradient, max_relative_error};
pub use graph::{Graph, NodeId, Unary};
pub use mlp::{leaky_relu, selu, Activation, Mlp, MountedMlp, SELU_ALPHA, SELU_LAMBDA};
pub use params::{ParamVector, TensorSpec};
