//! Dense 64-bit tensors, reverse-mode differentiation, a reproducible RNG and
//! the Adam optimizer.

mod adam;
mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport};
pub use rng::{derive_seed, splitmix64, Rng};
pub use tape::{gelu, js, kl, matmul_raw, Gradients, Tape, Var, LOG_CLAMP};
pub use tensor::Tensor;


use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    Axis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("column slice [{start}, {end}) invalid for {cols} columns")]
    Slice { start: usize, end: usize, cols: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss does not depend on any differentiable leaf")]
    Detached,
    #[error("backward already ran on this tape")]
    BackwardTwice,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(&'static str),
}
