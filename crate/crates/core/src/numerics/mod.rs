//! Dense kernels, reverse-mode differentiation, Adam and gradient checking.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod sparse;
mod tensor;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, TensorEntry};
pub use gradcheck::{
    check_gradients, compare_gradients, forward_backward, relative_error, GradCheckReport,
    ParamCheck,
};
pub use graph::{BinaryKind, Gradients, Graph, ParamId, ParamStore, UnaryKind, Var};
pub use sparse::SparseMatrix;
pub use tensor::{dot, sigmoid, softmax, softplus, Tensor};
