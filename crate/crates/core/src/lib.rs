//! Siamese-CNN stereo matching.
//!
//! Shared-weight convolutional branches (with max pooling and stride-2
//! deconvolutions to widen context while keeping per-pixel resolution) turn a
//! rectified image pair into per-pixel descriptors. A correlation stage scores
//! every candidate disparity, either with a plain inner product or with a small
//! learned head run over the pairing of left features with disparity-shifted
//! right features. Disparity is the per-pixel argmax of the resulting volume.

pub mod checkpoint;
pub mod correlation;
pub mod data_io;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod model;
pub mod ops;
pub mod real;
pub mod rng;
pub mod siamese;
pub mod tensor;
pub mod training;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use model::{CorrMode, ScoreRoute, StereoModel};
pub use real::Real;
pub use tensor::{Shape4, Tensor4};
