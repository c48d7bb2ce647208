use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::ops::ConvGeom;
use crate::scalar::matmul;
use crate::tape::{GradCtx, Op};
use crate::{Result, Scalar, Tape, Var};

/// Patch layout shared by im2col/col2im: rows are `(channel, ki, kj)`,
/// columns are output positions.
#[derive(Debug, Clone, Copy)]
struct Patches {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    geom: ConvGeom,
}

impl Patches {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// True when the patch matrix is the input itself.
    fn is_identity(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.geom.stride == (1, 1)
            && self.geom.padding == [0; 4]
            && self.ho == self.h
            && self.wo == self.w
    }

    /// Output columns `ow` whose input column `ow*sw + off - left` is in range.
    fn valid_cols(&self, off: usize) -> (usize, usize) {
        let sw = self.geom.stride.1;
        let left = self.geom.padding[2];
        // smallest ow with ow*sw + off >= left
        let lo = if off >= left { 0 } else { (left - off).div_ceil(sw) };
        // largest ow with ow*sw + off < w + left
        let lim = self.w + left;
        let hi = if off >= lim { 0 } else { ((lim - off - 1) / sw + 1).min(self.wo) };
        (lo.min(hi), hi)
    }

    fn im2col<S: Scalar>(&self, x: &[S], cols: &mut [S]) {
        let (sh, sw) = self.geom.stride;
        let (dh, dw) = self.geom.dilation;
        let (top, left) = (self.geom.padding[0], self.geom.padding[2]);
        let ncols = self.cols();
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    let (lo, hi) = self.valid_cols(kj * dw);
                    for oh in 0..self.ho {
                        let drow = &mut dst[oh * self.wo..(oh + 1) * self.wo];
                        let ih = (oh * sh + ki * dh) as isize - top as isize;
                        if ih < 0 || ih >= self.h as isize {
                            drow.fill(S::zero());
                            continue;
                        }
                        let src = &plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        drow[..lo].fill(S::zero());
                        drow[hi..].fill(S::zero());
                        if hi > lo {
                            let start = lo * sw + kj * dw - left;
                            if sw == 1 {
                                drow[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                            } else {
                                for (k, d) in drow[lo..hi].iter_mut().enumerate() {
                                    *d = src[start + k * sw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a patch matrix back onto an image (adjoint of im2col).
    fn col2im<S: Scalar>(&self, cols: &[S], x: &mut [S]) {
        let (sh, sw) = self.geom.stride;
        let (dh, dw) = self.geom.dilation;
        let (top, left) = (self.geom.padding[0], self.geom.padding[2]);
        let ncols = self.cols();
        for ci in 0..self.c {
            let plane = &mut x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    let (lo, hi) = self.valid_cols(kj * dw);
                    if hi <= lo {
                        continue;
                    }
                    for oh in 0..self.ho {
                        let ih = (oh * sh + ki * dh) as isize - top as isize;
                        if ih < 0 || ih >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        let srow = &src[oh * self.wo..(oh + 1) * self.wo];
                        let start = lo * sw + kj * dw - left;
                        for (k, &v) in srow[lo..hi].iter().enumerate() {
                            let d = &mut dst[start + k * sw];
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<S: Scalar>(tape: &Tape<S>, b: Option<Var>, channels: usize, op: &str) -> Result<()> {
    if let Some(b) = b {
        if tape.shape(b) != [channels] {
            return Err(shape_err!("{op}: bias shape {:?}, expected [{channels}]", tape.shape(b)));
        }
    }
    Ok(())
}

fn add_channel_bias<S: Scalar>(out: &mut [S], bias: &[S], plane: usize) {
    for (chunk, &b) in out.chunks_exact_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn bias_grad<S: Scalar>(g: &[S], db: &mut [S], plane: usize) {
    let o = db.len();
    for (k, chunk) in g.chunks_exact(plane).enumerate() {
        let s = chunk.iter().fold(S::zero(), |a, &v| a + v);
        db[k % o] = db[k % o] + s;
    }
}

impl<S: Scalar> Tape<S> {
    /// 2-D cross-correlation. `x` is `[N,C,H,W]`, `w` is `[O,C,Kh,Kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 4 || ws.len() != 4 {
            return Err(shape_err!("conv2d: expected rank-4 input and weight, got {xs:?} and {ws:?}"));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if c != wc {
            return Err(shape_err!("conv2d: input has {c} channels, weight expects {wc} ({xs:?} vs {ws:?})"));
        }
        check_bias(self, b, o, "conv2d")?;
        let (ho, wo) = geom.output_size(h, wd, kh, kw)?;
        let p = Patches { c, h, w: wd, kh, kw, ho, wo, geom };
        let (rows, ncols) = (p.rows(), p.cols());
        let mut out = vec![S::zero(); n * o * ncols];
        let mut cols = if p.is_identity() { Vec::new() } else { vec![S::zero(); rows * ncols] };
        let (xv, wv) = (self.value(x), self.value(w));
        for i in 0..n {
            let xi = &xv[i * c * h * wd..(i + 1) * c * h * wd];
            let patch: &[S] = if p.is_identity() {
                xi
            } else {
                p.im2col(xi, &mut cols);
                &cols
            };
            matmul(wv, false, patch, false, &mut out[i * o * ncols..(i + 1) * o * ncols], o, rows, ncols, false);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b), ncols);
        }
        let needs = self.any_needs(&[x, w]) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(alloc::vec![n, o, ho, wo], out, Op::Conv2d { x, w, b, geom }, needs))
    }

    /// Transposed convolution without padding: `x` is `[N,C,H,W]`, `w` is
    /// `[C,O,Kh,Kw]`, output `[N,O,(H-1)·sh+Kh,(W-1)·sw+Kw]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: (usize, usize)) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 4 || ws.len() != 4 {
            return Err(shape_err!(
                "conv_transpose2d: expected rank-4 input and weight, got {xs:?} and {ws:?}"
            ));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(shape_err!("conv_transpose2d: stride must be positive"));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (wc, o, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if c != wc {
            return Err(shape_err!(
                "conv_transpose2d: input has {c} channels, weight expects {wc} ({xs:?} vs {ws:?})"
            ));
        }
        check_bias(self, b, o, "conv_transpose2d")?;
        let (ho, wo) = ((h - 1) * stride.0 + kh, (wd - 1) * stride.1 + kw);
        let p = transposed_patches(o, ho, wo, kh, kw, stride, h, wd);
        let rows = p.rows();
        let mut out = vec![S::zero(); n * o * ho * wo];
        let mut cols = vec![S::zero(); rows * h * wd];
        let (xv, wv) = (self.value(x), self.value(w));
        for i in 0..n {
            let xi = &xv[i * c * h * wd..(i + 1) * c * h * wd];
            matmul(wv, true, xi, false, &mut cols, rows, c, h * wd, false);
            p.col2im(&cols, &mut out[i * o * ho * wo..(i + 1) * o * ho * wo]);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b), ho * wo);
        }
        let needs = self.any_needs(&[x, w]) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(alloc::vec![n, o, ho, wo], out, Op::ConvTranspose2d { x, w, b, stride }, needs))
    }
}

/// Patch geometry of the transposed conv's *output*: im2col over the output
/// with the forward stride recovers the `h × w` input grid.
#[allow(clippy::too_many_arguments)]
fn transposed_patches(
    o: usize,
    ho: usize,
    wo: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    h: usize,
    w: usize,
) -> Patches {
    Patches {
        c: o,
        h: ho,
        w: wo,
        kh,
        kw,
        ho: h,
        wo: w,
        geom: ConvGeom { stride, padding: [0; 4], dilation: (1, 1) },
    }
}

pub(crate) fn conv2d_backward<S: Scalar>(
    ctx: &mut GradCtx<'_, S>,
    out: usize,
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: &ConvGeom,
    g: &[S],
) {
    let (xs, ws) = (ctx.shape(x), ctx.shape(w));
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (o, kh, kw) = (ws[0], ws[2], ws[3]);
    let os = &ctx.nodes[out].shape;
    let (ho, wo) = (os[2], os[3]);
    let p = Patches { c, h, w: wd, kh, kw, ho, wo, geom: *geom };
    let (rows, ncols) = (p.rows(), p.cols());
    let (xv, wv) = (ctx.value(x), ctx.value(w));
    if let Some(b) = b.filter(|&b| ctx.needs(b)) {
        bias_grad(g, ctx.buf(b), ncols);
    }
    let (need_x, need_w) = (ctx.needs(x), ctx.needs(w));
    let identity = p.is_identity();
    let mut cols = if need_w && !identity { vec![S::zero(); rows * ncols] } else { Vec::new() };
    let mut dcols = if need_x && !identity { vec![S::zero(); rows * ncols] } else { Vec::new() };
    for i in 0..n {
        let gi = &g[i * o * ncols..(i + 1) * o * ncols];
        if need_w {
            let xi = &xv[i * c * h * wd..(i + 1) * c * h * wd];
            let patch: &[S] = if identity {
                xi
            } else {
                p.im2col(xi, &mut cols);
                &cols
            };
            matmul(gi, false, patch, true, ctx.buf(w), o, ncols, rows, true);
        }
        if need_x {
            let dx = &mut ctx.buf(x)[i * c * h * wd..(i + 1) * c * h * wd];
            if identity {
                matmul(wv, true, gi, false, dx, rows, o, ncols, true);
            } else {
                matmul(wv, true, gi, false, &mut dcols, rows, o, ncols, false);
                p.col2im(&dcols, dx);
            }
        }
    }
}

pub(crate) fn conv_transpose2d_backward<S: Scalar>(
    ctx: &mut GradCtx<'_, S>,
    out: usize,
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: (usize, usize),
    g: &[S],
) {
    let (xs, ws) = (ctx.shape(x), ctx.shape(w));
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (o, kh, kw) = (ws[1], ws[2], ws[3]);
    let os = &ctx.nodes[out].shape;
    let (ho, wo) = (os[2], os[3]);
    let p = transposed_patches(o, ho, wo, kh, kw, stride, h, wd);
    let rows = p.rows();
    let (xv, wv) = (ctx.value(x), ctx.value(w));
    if let Some(b) = b.filter(|&b| ctx.needs(b)) {
        bias_grad(g, ctx.buf(b), ho * wo);
    }
    let (need_x, need_w) = (ctx.needs(x), ctx.needs(w));
    if !need_x && !need_w {
        return;
    }
    let mut dcols = vec![S::zero(); rows * h * wd];
    for i in 0..n {
        p.im2col(&g[i * o * ho * wo..(i + 1) * o * ho * wo], &mut dcols);
        if need_x {
            let dx = &mut ctx.buf(x)[i * c * h * wd..(i + 1) * c * h * wd];
            matmul(wv, false, &dcols, false, dx, c, rows, h * wd, true);
        }
        if need_w {
            let xi = &xv[i * c * h * wd..(i + 1) * c * h * wd];
            matmul(xi, false, &dcols, true, ctx.buf(w), c, h * wd, rows, true);
        }
    }
}
