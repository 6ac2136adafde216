//! Pixel-wise segmentation from multi-resolution generator feature maps kept
//! in memory-mapped, natively-sized block files.
//!
//! The pipeline: a [`feature_store`] holds per-image feature blocks,
//! [`resampler`] lifts them to image coordinates on read, [`sampler`] turns
//! annotated images into labeled pixel batches, [`mlp`] and [`trainer`] fit the
//! pixel classifier, and [`inference`] streams whole images through it to
//! produce image–annotation pairs scored by [`metrics`]. [`synthetic`] builds
//! stores with known ground truth for end-to-end checks.

pub mod annotations;
pub mod cli;
pub mod error;
pub mod feature_store;
pub mod inference;
pub mod metrics;
pub mod mlp;
pub mod netpbm;
pub mod resampler;
pub mod rng;
pub mod sampler;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
