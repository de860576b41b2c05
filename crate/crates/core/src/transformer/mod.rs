//! Decoder-only transformer trained from scratch with hand-written
//! backpropagation.
//!
//! Pre-norm blocks (`x + attn(ln(x))`, `x + mlp(ln(x))`), GELU feed-forward,
//! learned or sinusoidal positions and an output head tied to the token
//! embedding. Every sequence is processed at its own length, so padding
//! never contributes to the loss or the gradient.

mod checkpoint;
mod config;
pub mod float;
mod model;
pub mod ops;
mod params;
mod train;

pub use checkpoint::{Checkpoint, TrainingMeta, FORMAT_VERSION};
pub use config::{param_count, ModelConfig, Positional, Precision, TrainConfig};
pub use float::Float;
pub use model::KvCache;
pub use ops::attention;
pub use params::{LayerOffsets, Layout, Params, TensorSpec};
pub use train::{finetune, gradients, loss, nll_sum, train, train_params, Adam, LossPoint, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum TransformerError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch has no prediction targets")]
    EmptyBatch,
    #[error("sequence of {len} tokens exceeds context length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {token} outside vocabulary of {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },
    #[error("loss became non-finite ({loss}) at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("corpus uses tokens missing from the checkpoint vocabulary: {0:?}")]
    VocabMismatch(Vec<String>),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("checkpoint: {0}")]
    CheckpointFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
