use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::tape::{GradCtx, Op};
use crate::{numel, Result, Scalar, Tape, Var};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gathers `src` (shape `shape`) into permuted order: output axis `i` is
/// input axis `perm[i]`. With `scatter` the mapping runs backwards and adds.
fn permute_copy<S: Scalar>(src: &[S], shape: &[usize], perm: &[usize], dst: &mut [S], scatter: bool) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let rank = shape.len();
    let src_step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for o in 0..src.len() {
        if scatter {
            dst[offset] = dst[offset] + src[o];
        } else {
            dst[o] = src[offset];
        }
        // odometer increment over the output index
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += src_step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_step[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

impl<S: Scalar> Tape<S> {
    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(shape_err!("concat: no inputs"));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(shape_err!("concat: axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let off_axis_equal = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !off_axis_equal {
                return Err(shape_err!("concat: {s:?} incompatible with {base:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let needs = self.any_needs(inputs);
        Ok(self.push(shape, out, Op::Concat { inputs: inputs.to_vec(), axis }, needs))
    }

    /// Slice `[start, start+len)` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || len == 0 || start + len > xs[axis] {
            return Err(shape_err!("narrow: [{start}, {}) out of range on axis {axis} of {xs:?}", start + len));
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * xs[axis] + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let needs = self.needs(x);
        Ok(self.push(shape, out, Op::Narrow { x, axis, start }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() || shape.contains(&0) {
            return Err(shape_err!("reshape: cannot view {:?} as {shape:?}", self.shape(x)));
        }
        let out = self.value(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(shape.to_vec(), out, Op::Reshape { x }, needs))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let mut seen = vec![false; xs.len()];
        if perm.len() != xs.len() || perm.iter().any(|&p| p >= xs.len() || core::mem::replace(&mut seen[p], true)) {
            return Err(shape_err!("permute: {perm:?} is not a permutation of {} axes", xs.len()));
        }
        let mut out = vec![S::zero(); xs.iter().product()];
        permute_copy(self.value(x), &xs, perm, &mut out, false);
        let shape = perm.iter().map(|&p| xs[p]).collect();
        let needs = self.needs(x);
        Ok(self.push(shape, out, Op::Permute { x, perm: perm.to_vec() }, needs))
    }
}

pub(crate) fn concat_backward<S: Scalar>(ctx: &mut GradCtx<'_, S>, out: usize, inputs: &[Var], axis: usize, g: &[S]) {
    let os = ctx.shape(Var(out));
    let outer: usize = os[..axis].iter().product();
    let inner: usize = os[axis + 1..].iter().product();
    let row = os[axis] * inner;
    let mut offset = 0;
    for &v in inputs {
        let chunk = ctx.shape(v)[axis] * inner;
        if ctx.needs(v) {
            let d = ctx.buf(v);
            for o in 0..outer {
                let src = &g[o * row + offset..o * row + offset + chunk];
                for (a, &b) in d[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                    *a = *a + b;
                }
            }
        }
        offset += chunk;
    }
}

pub(crate) fn narrow_backward<S: Scalar>(
    ctx: &mut GradCtx<'_, S>,
    out: usize,
    x: Var,
    axis: usize,
    start: usize,
    g: &[S],
) {
    if !ctx.needs(x) {
        return;
    }
    let xs = ctx.shape(x);
    let len = ctx.shape(Var(out))[axis];
    let outer: usize = xs[..axis].iter().product();
    let inner: usize = xs[axis + 1..].iter().product();
    let full = xs[axis];
    let d = ctx.buf(x);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        for (a, &b) in d[base..base + len * inner].iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
            *a = *a + b;
        }
    }
}

pub(crate) fn permute_backward<S: Scalar>(ctx: &mut GradCtx<'_, S>, _out: usize, x: Var, perm: &[usize], g: &[S]) {
    if !ctx.needs(x) {
        return;
    }
    let xs = ctx.shape(x);
    permute_copy(g, xs, perm, ctx.buf(x), true);
}
