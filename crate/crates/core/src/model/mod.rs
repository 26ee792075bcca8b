//! The super-resolution network and its weights.

pub mod blocks;
pub mod config;
pub mod edc;
pub mod network;
pub mod store;

use thiserror::Error;

use crate::tensor::{Shape, TensorError};

pub use blocks::{ConvFormerLayer, Efn, LkMixer, ResidualBlock};
pub use config::ModelConfig;
pub use edc::{edc_forward_branched, Edc, EdcWeights, FixedKernels};
pub use network::{edc_alphas, fuse_store, Cfsr};
pub use store::{StoreError, StoreMode, WeightStore};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("state error: {0}")]
    State(String),
    #[error("expected a 3-channel input, got {0} channels")]
    InputChannels(usize),
    #[error("weights are missing tensor {0}")]
    MissingTensor(String),
    #[error("unknown tensor {0} for this config")]
    UnknownTensor(String),
    #[error("tensor {name}: expected shape {expected}, found {found}")]
    ShapeMismatch {
        name: String,
        expected: Shape,
        found: Shape,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Store(#[from] StoreError),
}
