//! IO and command-line layer over `stseg-core`: binary tensor and checkpoint
//! formats, PPM/PGM images, the on-disk dataset layout, flat run
//! configurations, training runs and the placement ablation.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod image;
pub mod run;

pub use crate::error::{Error, Result};
