//! Coarse-to-fine attention network for image quality assessment.
//!
//! The crate builds a small convolutional feature pyramid, reduces every
//! level to a common token grid with gated local pooling, enhances the
//! tokens with self-attention, propagates coarse-level semantics down the
//! pyramid with cross-scale attention, and regresses a quality score from
//! the finest enhanced level. Both full-reference (distorted + pristine
//! pair) and no-reference (single image) modes share the attention stack.
//!
//! All numeric code is generic over the scalar type: `f32` for training,
//! `f64` for finite-difference gradient verification.

pub mod attention;
pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod glp;
pub mod gradcheck;
pub mod imageio;
pub mod lpips_plus;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};

/// Single-precision tensor, the training substrate.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor, used for gradient checks.
pub type Tensor64 = Tensor<f64>;
/// Single-precision computation graph.
pub type Graph32 = autodiff::Graph<f32>;
/// Double-precision computation graph.
pub type Graph64 = autodiff::Graph<f64>;
