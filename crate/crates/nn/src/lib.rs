//! A small CPU neural-network engine for trajectory forecasting: dilated
//! convolution blocks with batch normalisation and pooling, Bi-LSTM encoder,
//! position-aware attention, Bi-LSTM decoder, and a range-mapped sigmoid head.
//! Gradients are derived by hand and checked against finite differences.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod param;
pub mod train;

pub use layers::{Layer, Tensor};
pub use model::{Ablation, Model, ModelConfig};
pub use optim::{Adam, AdamConfig};
pub use param::Param;
pub use train::{train, Dataset, EpochLog, TrainConfig, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
