//! Unsupervised keypoint detection and description for retinal image
//! registration.

pub mod augmentation;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod descriptor;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod manifest;
pub mod nn;
pub mod raster;
pub mod registration;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
