//! Adversarial attacks on 3D point-cloud classifiers via region saliency.
//!
//! The pipeline: partition a cloud into spatial regions, score each region's
//! importance to a classifier with Shapley values, then run an adaptive
//! per-axis gradient attack restricted to the most vulnerable regions.

pub mod attack;
pub mod classifier;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod optim;
pub mod regions;
pub mod seed;
pub mod shapley;

pub use error::{Error, Result};
