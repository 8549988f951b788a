//! A small NHWC tensor network: one convolutional stack per feature family,
//! concatenation, a dense head and a two-class softmax, with hand-written
//! reverse-mode gradients.

mod layers;
mod loss;
mod model;
mod tensor;

pub use layers::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, dense, dense_backward, maxpool2x2, maxpool2x2_backward,
    relu_backward, relu_in_place, same_padding, softmax2, Activation, BnCache, RunningStats, BN_EPSILON, BN_MOMENTUM,
};
pub use loss::{check_labels, compute_loss, LossTerms, PROB_CLAMP};
pub use model::{
    Architecture, EasiDeepModel, ParamKind, ParamSpec, ShapeReport, Stage, Trace, CHANNEL_STAGES, CONV_LAYERS,
    GRID_COLS, GRID_ROWS,
};
pub use tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {what}: expected {expected:?}, got {got:?}")]
    Shape { what: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("batch normalisation needs at least 2 samples in training mode, got {0}")]
    BatchTooSmall(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("label of sample {0} is not one-hot")]
    Label(usize),
    #[error("trace was recorded in inference mode and holds no intermediates")]
    MissingTrace,
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid architecture: {0}")]
    Architecture(String),
}
