//! Quantifier cloze workbench: dataset construction from raw text, the
//! eight sentence classifiers with their ablation harness, evaluation
//! reports, and the human judgment protocol.
//!
//! Numeric code is generic over [`Scalar`]; training uses `f32` and gradient
//! checks `f64` (see the aliases below).

pub mod annotation;
pub mod autodiff;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod models;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tensor64 = autodiff::Tensor<f64>;
pub type ParamSet32 = autodiff::ParamSet<f32>;
pub type ParamSet64 = autodiff::ParamSet<f64>;
