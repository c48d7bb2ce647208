use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::tape::{GradCtx, Op};
use crate::{Result, Scalar, Tape, Var};

impl<S: Scalar> Tape<S> {
    /// 2×2 max pooling with stride 2. Ties resolve to the first element in
    /// row-major window order, which is also where the gradient goes.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(shape_err!("maxpool2d: expected [N,C,H,W], got {xs:?}"));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err!("maxpool2d: spatial dims must be even, got {h}x{w}"));
        }
        let (ho, wo) = (h / 2, w / 2);
        let xv = self.value(x);
        let mut out = vec![S::zero(); n * c * ho * wo];
        let mut argmax: Vec<u32> = vec![0; out.len()];
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            for oh in 0..ho {
                for ow in 0..wo {
                    let base = 2 * oh * w + 2 * ow;
                    let mut best = base;
                    for idx in [base + 1, base + w, base + w + 1] {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    let o = plane * ho * wo + oh * wo + ow;
                    out[o] = src[best];
                    argmax[o] = (plane * h * w + best) as u32;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(vec![n, c, ho, wo], out, Op::MaxPool2 { x, argmax }, needs))
    }
}

pub(crate) fn maxpool2_backward<S: Scalar>(ctx: &mut GradCtx<'_, S>, x: Var, argmax: &[u32], g: &[S]) {
    if !ctx.needs(x) {
        return;
    }
    let dx = ctx.buf(x);
    for (&idx, &gv) in argmax.iter().zip(g) {
        dx[idx as usize] = dx[idx as usize] + gv;
    }
}
