//! Self-supervised one-shot segmentation from the hidden features of a
//! layered style generator.
//!
//! A contrastive stage clusters per-pixel generator features with swapped
//! optimal-transport assignments; a one-shot stage then trains a small
//! segmenter on a single annotated sample and labels fresh samples on the fly.

pub mod augment;
pub mod checkpoint;
pub mod cluster;
pub mod config;
pub mod error;
pub mod features;
pub mod generator;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod pnm;
pub mod resample;
pub mod rng;
pub mod segmenter;
pub mod swav;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
