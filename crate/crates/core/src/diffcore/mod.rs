//! Reverse-mode automatic differentiation over dense f64 tensors.

mod check;
mod params;
mod tape;
mod tensor;

pub use check::{grad_check, GradCheckReport};
pub use params::ParamSet;
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op} takes {expected} inputs, got {got}")]
    Arity { op: &'static str, expected: usize, got: usize },
    #[error("invalid argument to {op}: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("unknown tape value {0}")]
    UnknownVar(usize),
    #[error("non-finite value at input {input}, coordinate {coord}")]
    NonFinite { input: usize, coord: usize },
}
