use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::ops::Mode;
use crate::tape::{GradCtx, Op};
use crate::{Error, Result, Scalar, Tape, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Scalar> BatchNormState<S> {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![S::zero(); channels], var: vec![S::one(); channels] }
    }
}

impl<S: Scalar> Tape<S> {
    /// Per-channel batch normalisation over `(N, H, W)`.
    ///
    /// In train mode the running stats are updated in place (unbiased
    /// variance, momentum [`BN_MOMENTUM`]).
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<S>,
        mode: Mode,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err!("batchnorm2d: expected [N,C,H,W], got {xs:?}"));
        }
        let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(shape_err!("batchnorm2d: {name} shape {:?}, expected [{c}]", self.shape(v)));
            }
        }
        if state.mean.len() != c || state.var.len() != c {
            return Err(shape_err!("batchnorm2d: running stats sized {}, expected {c}", state.mean.len()));
        }
        let m = n * plane;
        let xv = self.value(x);
        let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
            Mode::Train => {
                if m < 2 {
                    return Err(Error::DegenerateBatch(m));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for i in 0..n {
                        s += xv[(i * c + ch) * plane..(i * c + ch + 1) * plane].iter().map(|v| v.f64()).sum::<f64>();
                    }
                    let mu = s / m as f64;
                    let mut q = 0.0;
                    for i in 0..n {
                        q += xv[(i * c + ch) * plane..(i * c + ch + 1) * plane]
                            .iter()
                            .map(|v| (v.f64() - mu) * (v.f64() - mu))
                            .sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = q / m as f64;
                }
                let unbias = m as f64 / (m - 1) as f64;
                for ch in 0..c {
                    let rm = state.mean[ch].f64();
                    let rv = state.var[ch].f64();
                    state.mean[ch] = S::of((1.0 - BN_MOMENTUM) * rm + BN_MOMENTUM * mean[ch]);
                    state.var[ch] = S::of((1.0 - BN_MOMENTUM) * rv + BN_MOMENTUM * var[ch] * unbias);
                }
                (mean, var)
            }
            Mode::Eval => (
                state.mean.iter().map(|v| v.f64()).collect(),
                state.var.iter().map(|v| v.f64()).collect(),
            ),
        };
        let inv_std: Vec<S> = var.iter().map(|&v| S::of(1.0 / libm::sqrt(v + BN_EPS))).collect();
        let mean: Vec<S> = mean.into_iter().map(S::of).collect();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![S::zero(); xv.len()];
        let mut out = vec![S::zero(); xv.len()];
        for i in 0..n {
            for ch in 0..c {
                let r = (i * c + ch) * plane..(i * c + ch + 1) * plane;
                let (mu, is, ga, be) = (mean[ch], inv_std[ch], gv[ch], bv[ch]);
                for ((xh, o), &v) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&xv[r]) {
                    *xh = (v - mu) * is;
                    *o = ga * *xh + be;
                }
            }
        }
        let needs = self.any_needs(&[x, gamma, beta]);
        let batch_stats = mode == Mode::Train;
        Ok(self.push(xs, out, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }, needs))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_backward<S: Scalar>(
    ctx: &mut GradCtx<'_, S>,
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[S],
    inv_std: &[S],
    batch_stats: bool,
    g: &[S],
) {
    let xs = ctx.shape(x);
    let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
    let m = (n * plane) as f64;
    let mut sum_g = vec![0.0f64; c];
    let mut sum_gx = vec![0.0f64; c];
    for i in 0..n {
        for ch in 0..c {
            let r = (i * c + ch) * plane..(i * c + ch + 1) * plane;
            for (&gv, &xh) in g[r.clone()].iter().zip(&xhat[r]) {
                sum_g[ch] += gv.f64();
                sum_gx[ch] += (gv * xh).f64();
            }
        }
    }
    if ctx.needs(gamma) {
        let dg = ctx.buf(gamma);
        for ch in 0..c {
            dg[ch] = dg[ch] + S::of(sum_gx[ch]);
        }
    }
    if ctx.needs(beta) {
        let db = ctx.buf(beta);
        for ch in 0..c {
            db[ch] = db[ch] + S::of(sum_g[ch]);
        }
    }
    if !ctx.needs(x) {
        return;
    }
    let gv = ctx.value(gamma);
    let dx = ctx.buf(x);
    for i in 0..n {
        for ch in 0..c {
            let r = (i * c + ch) * plane..(i * c + ch + 1) * plane;
            if batch_stats {
                let k = gv[ch].f64() * inv_std[ch].f64() / m;
                let (sg, sgx) = (sum_g[ch], sum_gx[ch]);
                for ((d, &gy), &xh) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]) {
                    let v = k * (m * gy.f64() - sg - xh.f64() * sgx);
                    *d = *d + S::of(v);
                }
            } else {
                // running stats are constants here
                let k = gv[ch] * inv_std[ch];
                for (d, &gy) in dx[r.clone()].iter_mut().zip(&g[r]) {
                    *d = *d + k * gy;
                }
            }
        }
    }
}
