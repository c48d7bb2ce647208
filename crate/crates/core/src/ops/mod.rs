//! Differentiable primitives. Each op is a method on [`Tape`](crate::Tape)
//! that computes its value eagerly and records what its adjoint needs.

pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod layout;
pub(crate) mod loss;
pub(crate) mod norm;
pub(crate) mod pool;

pub use self::norm::{BatchNormState, BN_EPS, BN_MOMENTUM};

use crate::error::shape_err;
use crate::Result;

/// Stride / padding / dilation of a 2-D cross-correlation.
///
/// Padding is `[top, bottom, left, right]` so even kernels can pad one side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: (usize, usize),
    pub padding: [usize; 4],
    pub dilation: (usize, usize),
}

impl Default for ConvGeom {
    fn default() -> Self {
        Self { stride: (1, 1), padding: [0; 4], dilation: (1, 1) }
    }
}

impl ConvGeom {
    /// Stride 1, symmetric padding `p` on all sides.
    pub fn padded(p: usize) -> Self {
        Self { padding: [p; 4], ..Self::default() }
    }

    pub fn with_stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn with_dilation(mut self, dh: usize, dw: usize) -> Self {
        self.dilation = (dh, dw);
        self
    }

    pub fn with_padding(mut self, padding: [usize; 4]) -> Self {
        self.padding = padding;
        self
    }

    /// Output spatial size for an `h × w` input and `kh × kw` kernel.
    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> Result<(usize, usize)> {
        let [pt, pb, pl, pr] = self.padding;
        let (sh, sw) = self.stride;
        let (dh, dw) = self.dilation;
        if sh == 0 || sw == 0 || dh == 0 || dw == 0 {
            return Err(shape_err!("stride and dilation must be positive: {self:?}"));
        }
        let (eh, ew) = (dh * (kh - 1) + 1, dw * (kw - 1) + 1);
        let (ph, pw) = (h + pt + pb, w + pl + pr);
        if ph < eh || pw < ew {
            return Err(shape_err!(
                "padded input {ph}x{pw} smaller than dilated kernel {eh}x{ew}"
            ));
        }
        Ok(((ph - eh) / sh + 1, (pw - ew) / sw + 1))
    }
}

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

impl Activation {
    pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
}

/// Train mode normalises with batch statistics and updates running stats;
/// eval mode reads the running stats only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
