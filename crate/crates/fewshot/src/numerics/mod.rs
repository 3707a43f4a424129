//! Minimal differentiable-computation substrate.
//!
//! Dense f64 tensors, a tape that records the small set of differentiable
//! operations the rest of the framework needs, an Adam optimizer over named
//! parameters, a central finite-difference gradient verifier, and a versioned
//! binary checkpoint container.

mod checkpoint;
mod gradcheck;
pub mod init;
pub mod ops;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use params::{AdamConfig, Parameter, ParameterSet};
pub use tape::{bind_params, BoundParams, Gradients, NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

/// Dropout / forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: value count {values} does not match shape {shape:?}")]
    ValueCount {
        op: &'static str,
        shape: Vec<usize>,
        values: usize,
    },
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidProbability(f64),
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("gradient for unknown parameter {0:?}")]
    UnknownGradient(String),
    #[error("gradient shape {grad:?} does not match parameter {name:?} of shape {param:?}")]
    GradientShape {
        name: String,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("loss function is not deterministic: {first} vs {second}")]
    NonDeterministicLoss { first: f64, second: f64 },
    #[error("{op}: expected scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("checkpoint io: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;
