//! Dense arrays, a reverse-mode tape, a finite-difference gradient checker,
//! named parameter storage, and first-order optimizers.

mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::{soft_box_raw, softmax_rows_raw, Gradients, Graph, Var};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{Bound, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("invalid tensor: {0}")]
    Construction(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Logistic function, branch-stable for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
