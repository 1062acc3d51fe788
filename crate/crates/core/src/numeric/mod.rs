//! Dense `f64` tensors and a reverse-mode tape.
//!
//! Everything the models compute is expressed through the primitives on
//! [`Tape`]: matrix products, elementwise arithmetic, row gathers and
//! scatters for message passing, activations, and reductions. A forward
//! pass records nodes in evaluation order; [`Tape::backward`] walks them
//! in reverse and accumulates adjoints into the leaves. Summation always
//! runs in index order, so identical inputs give bit-identical values and
//! gradients.

mod gradcheck;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{
    grad_check, grad_check_coords, grad_check_many, relative_error, Coordinate, GradCheckReport, FD_STEP,
    RELATIVE_FLOOR,
};
pub use params::{BoundParams, Param, ParamStore, MANIFEST_FILE, PARAMS_FILE};
pub use tape::{sigmoid, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("ShapeMismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("IndexOutOfBounds in {op}: index {index} >= {len}")]
    IndexOutOfBounds { op: &'static str, index: usize, len: usize },
    #[error("NonScalarLoss: loss has shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("MissingParameter: {0}")]
    MissingParameter(String),
    #[error("MalformedCheckpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
}
