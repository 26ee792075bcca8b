//! A lightweight ConvFormer super-resolution engine.
//!
//! The network replaces self-attention with a gated large-kernel depth-wise
//! convolution and uses an edge-preserving feed-forward network whose five
//! depth-wise branches merge into one kernel for inference. The crate covers
//! forward inference, L1 training with Adam, branch fusion, analytic cost
//! accounting, bicubic degradation and Y-channel PSNR/SSIM.

pub mod autodiff;
pub mod complexity;
pub mod data;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use model::{Cfsr, ModelConfig, ModelError, StoreMode, WeightStore};
pub use tensor::{Real, Shape, Tensor, TensorError};
