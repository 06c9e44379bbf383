//! Feed-forward networks trained by backpropagation.

pub mod checkpoint;
pub mod mlp;
pub mod policy;

use thiserror::Error;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, NamedNetwork};
pub use mlp::{Adam, Dropout, Mlp, Tape};
pub use policy::{train_supervised, EpochStats, Mode, PolicyNetwork, PolicyOutput, TrainConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeuralError {
    #[error("expected input of width {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}
