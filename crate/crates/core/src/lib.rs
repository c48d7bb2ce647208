//! Spatio-temporal semantic segmentation primitives.
//!
//! The crate is `no_std` + `alloc`: dense tensors with a reverse-mode tape,
//! U-Net building blocks, the three temporal units (ConvLSTM, pointwise and
//! 2DHW temporal networks), the placement variants that wire them into the
//! encoder, plus Adam, metrics and the synthetic occlusion benchmark. File
//! formats, CLI and anything touching the filesystem live in the `stseg`
//! companion crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod optim;
mod scalar;
pub mod synth;
pub mod tape;
pub mod temporal;
mod tensor;
pub mod train;

pub use crate::error::{Error, Result};
pub use crate::scalar::{DType, Scalar};
pub use crate::tape::{Tape, Var};
pub use crate::tensor::{numel, Tensor};

/// Label value excluded from the loss and from evaluation.
pub const VOID_LABEL: u8 = 255;
