//! From-scratch sequence-model stack: windowing and standardization, a
//! minimal reverse-mode autodiff engine, GRU / LSTM / Transformer forward
//! passes, and the training protocol used to learn wrench compensation.

pub mod data;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod train;

pub use data::{gather_batch, window_ends, Standardizer};
pub use model::{forward_inference, ArchKind, ModelSpec, NamedTensor, WeightSet};
pub use tensor::Tensor;
pub use train::{
    cross_validate, predict_series, predict_wrench, train_model, train_with_validation, Adam,
    AdamParams, CandidateOutcome, EpochStat, TrainConfig, TrainOutcome,
};

#[derive(Clone, Copy, Debug, PartialEq, thiserror::Error)]
pub enum SeqNetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("invalid model spec: {0}")]
    BadSpec(&'static str),
    #[error("series too short: need {need}, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("channel {channel} has zero variance")]
    DegenerateChannel { channel: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("no training candidates supplied")]
    NoCandidates,
}
