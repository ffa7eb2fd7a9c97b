//! Small reverse-mode differentiation engine over dense `f64` tensors.
//!
//! A [`Graph`] is built once from a closed set of primitives, evaluated
//! against [`Bindings`] for its inputs and parameters, and differentiated
//! with [`Graph::backward`]. [`finite_difference_check`] compares the
//! analytic gradients against central differences.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckReport, ParamCheck};
pub use graph::{Bindings, Gradients, Graph, Node, NodeId, Primitive, Values};
pub use tensor::Tensor;

pub(crate) use graph::softmax_row;

/// Norms below this are treated as zero when deciding degenerate angle
/// triplets. Shared with the angle features.
pub const DEGENERACY_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("node {node} ({name}) has no bound value")]
    UnboundInput { node: usize, name: String },
    #[error("node {node} ({primitive:?}) produced a non-finite value")]
    NonFiniteIntermediate { node: usize, primitive: Primitive },
    #[error("backward output must be scalar, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("node {node} is not a parameter")]
    NotAParameter { node: usize },
    #[error("unknown node {node}")]
    UnknownNode { node: usize },
    #[error("axis {axis} invalid for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("finite-difference step {0} outside [1e-7, 1e-3]")]
    InvalidStep(f64),
}
