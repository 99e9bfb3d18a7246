//! Gated convolutional language models with an adaptive softmax head.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common instantiations.

// `!(x > 0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bench;
pub mod checkpoint;
pub mod corpus;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod head;
pub mod layers;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod sweep;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
