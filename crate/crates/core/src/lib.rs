//! Multispectral land-cover segmentation: a reverse-mode autodiff engine,
//! DenseNet/SegNet model zoo, raster ingestion, training and evaluation.

pub mod autodiff;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod ops;
pub mod raster;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
