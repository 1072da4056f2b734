//! Dense `f64` tensors with a reverse-mode gradient tape.
//!
//! Forward operations are recorded on a [`Tape`] as they run; calling
//! [`Tape::backward`] on a scalar result walks the recording in reverse and
//! accumulates gradients into every node that requires them. Broadcasting is
//! limited to adding a bias over the last dimension.
//!
//! ```
//! use emoclf::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
//! ```

mod grad_check;
mod kernels;
mod tape;
mod tensor;

pub use grad_check::{grad_check, FD_STEP};
pub use tape::{Tape, Var, DEFAULT_LAYER_NORM_EPS};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {0:?}: every dimension must be positive")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows have differing lengths")]
    RaggedRows,
    #[error("cannot reshape {from:?} into {to:?}")]
    Reshape { from: Vec<usize>, to: Vec<usize> },
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("row index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("expected a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidProbability(f64),
    #[error("mask of length {mask} does not tile scores of shape {shape:?}")]
    MaskLayout { mask: usize, shape: Vec<usize> },
}
