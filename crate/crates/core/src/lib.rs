//! Weakly-supervised object localization.
//!
//! A fully convolutional network is trained from image-level presence labels
//! only. Its head turns backbone features into one localization map per
//! class and pools each map (max + alpha * min) into a class score, so the
//! same forward pass yields presence confidences and heatmap peaks.

pub mod augment;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod raster;
pub mod seed;
pub mod tensor;
pub mod wslnet;

pub use error::{Error, Result};
