//! Images, PNG I/O, bicubic degradation and training patch sampling.

mod dataset;
mod image;
mod patch;
mod resize;
mod synthetic;

use thiserror::Error;

pub use dataset::{degrade, list_pngs, Dataset, ImagePair};
pub use image::{
    load_png, load_png_with, quantize, rgb_to_y, save_png, ColorSpace, ImageBuffer, LumaPlane, PngOptions,
};
pub use patch::{collate, extract_patch, sample_patch, Augmentation, PatchSample};
pub use resize::{bicubic_resize, keys_cubic};
pub use synthetic::test_card;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt PNG {path}: {msg}")]
    Decode { path: String, msg: String },
    #[error("cannot encode PNG {path}: {msg}")]
    Encode { path: String, msg: String },
    #[error("not an RGB image: {path} has color type {color}")]
    NonRgb { path: String, color: String },
    #[error("unsupported PNG {path}: {what} (strict mode)")]
    Unsupported { path: String, what: String },
    #[error("bad image dimensions: {0}")]
    Dimensions(String),
    #[error("HR {hr:?} is not {scale}x LR {lr:?}")]
    ScaleMismatch {
        hr: (usize, usize),
        lr: (usize, usize),
        scale: usize,
    },
    #[error("patch {patch} larger than LR image {lr:?}")]
    PatchTooLarge { patch: usize, lr: (usize, usize) },
    #[error("dataset contains no images")]
    Empty,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
