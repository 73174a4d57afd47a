//! Dense `f64` tensors, a reverse-mode tape, and the AdamW optimizer.

mod mlp;
mod optim;
mod tape;
mod tensor;

pub use mlp::{Activation, Mlp};
pub use optim::{adamw_step, clip_grad_norm, global_norm, AdamWConfig, OptimState};
pub use tape::{Gradients, Mask, Tape, Var};
pub use tensor::{softmax_in_place, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch { op: &'static str, expected: usize, shape: Vec<usize> },
    #[error("invalid shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("expected a single value, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("{op}: index {index} out of range for length {len}")]
    OutOfRange { op: &'static str, index: usize, len: usize },
    #[error("{params} parameters but {grads} gradients")]
    ParamCount { params: usize, grads: usize },
}

/// Floor applied to the denominator of [`relative_error`].
pub const REL_ERR_FLOOR: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Central finite-difference gradient of a scalar function of a flat vector.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
