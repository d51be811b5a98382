//! Layer primitives recorded on a [`Tape`](crate::tensor::Tape).

pub mod batchnorm;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod pool;
pub mod suite;

pub use batchnorm::{BatchNormState, BatchStats, BnMode};
pub use conv::{conv2d_forward, conv_output_dim, conv_transpose2x2_forward, ConvGeom};
pub use linear::linear_forward;
pub use loss::{softmax_cross_entropy_forward, softmax_rows};
pub use pool::{avgpool2_forward, maxpool2_forward};
