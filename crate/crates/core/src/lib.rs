//! Point-cloud attribute quality enhancement.
//!
//! The pipeline splits a decoded cloud into overlapping patches, enhances one
//! color channel per patch with a graph-attention generator trained against a
//! WGAN-GP critic, and fuses the patches back into a full cloud. Evaluation
//! uses per-channel PSNR and Bjøntegaard rate-distortion deltas; a synthetic
//! distortion simulator stands in for an attribute codec.

pub mod autograd;
pub mod config;
pub mod critic;
pub mod distortion;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod patch;
pub mod pointcloud;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
