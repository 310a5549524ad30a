//! Minimal reverse-mode automatic differentiation on dense f32 tensors.
//!
//! Forward ops record backward closures on an explicit [`Tape`]; calling
//! [`Tape::backward`] replays them in reverse and accumulates gradients into
//! every `requires_grad` tensor that contributed to the loss. A tape and its
//! tensors form a single-threaded unit of work; independent tapes may run in
//! parallel as long as they only share immutable weight snapshots.
//!
//! Conventions: convolutions are cross-correlations (no kernel flip), output
//! sizes use floor division like mainstream deep-learning stacks, and all
//! stored values are 32-bit floats.

mod adam;
mod checkpoint;
mod ops;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedParam};
pub use ops::{
    add, bce_mean, concat0, conv1d_time, conv2d, gather_cells, index0, kl_channelwise, mean0,
    mul, mul_mask, relu, scale, sigmoid, smooth_l1_masked_mean, smooth_l1_mean, softmax,
    stack_new0, sum_all, upsample2x,
};
pub use tape::Tape;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid configuration in {op}: {detail}")]
    InvalidConfig { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },
}
