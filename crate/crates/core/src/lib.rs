//! Explainable CNN: an encoder-decoder generator turns each image into a
//! single-channel heatmap in [-1, 1], and a conventional classifier is
//! trained on that heatmap with class labels only.

pub mod data;
pub mod error;
pub mod explain;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Result, XcnnError};
pub use tensor::{Element, Fill, ParamId, Tape, Tensor, Var};
