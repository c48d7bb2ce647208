use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::ops::Activation;
use crate::scalar::matmul;
use crate::tape::{same_shape, GradCtx, Op};
use crate::{Result, Scalar, Tape, Var};

#[inline]
fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

impl Activation {
    pub fn apply<S: Scalar>(self, v: S) -> S {
        match self {
            Activation::Relu => {
                if v > S::zero() {
                    v
                } else {
                    S::zero()
                }
            }
            Activation::LeakyRelu(slope) => {
                if v > S::zero() {
                    v
                } else {
                    S::of(slope) * v
                }
            }
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
        }
    }
}

impl<S: Scalar> Tape<S> {
    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out: Vec<S> = self.value(x).iter().map(|&v| kind.apply(v)).collect();
        let needs = self.needs(x);
        self.push(self.shape(x).to_vec(), out, Op::Act { x, kind }, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let needs = self.any_needs(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add { a, b }, needs))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let needs = self.any_needs(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul { a, b }, needs))
    }

    /// Matrix product of `[M,K]` and `[K,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.shape(a), self.shape(b));
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
            return Err(shape_err!("matmul: incompatible shapes {as_:?} and {bs:?}"));
        }
        let (m, k, n) = (as_[0], as_[1], bs[1]);
        let mut out = vec![S::zero(); m * n];
        matmul(self.value(a), false, self.value(b), false, &mut out, m, k, n, false);
        let needs = self.any_needs(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b }, needs))
    }

    /// Adds a vector of length `shape[axis]` broadcast over every other axis.
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x);
        if axis >= xs.len() || self.shape(bias) != [xs[axis]] {
            return Err(shape_err!("add_bias: bias {:?} does not match axis {axis} of {xs:?}", self.shape(bias)));
        }
        let inner: usize = xs[axis + 1..].iter().product();
        let len = xs[axis];
        let bv = self.value(bias);
        let out = self
            .value(x)
            .chunks_exact(inner)
            .enumerate()
            .flat_map(|(k, chunk)| {
                let b = bv[k % len];
                chunk.iter().map(move |&v| v + b)
            })
            .collect();
        let needs = self.any_needs(&[x, bias]);
        Ok(self.push(xs.to_vec(), out, Op::AddBias { x, bias, axis }, needs))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().fold(S::zero(), |a, &v| a + v);
        let needs = self.needs(x);
        self.push(vec![1], vec![s], Op::Sum { x }, needs)
    }
}

pub(crate) fn activation_backward<S: Scalar>(ctx: &mut GradCtx<'_, S>, out: usize, x: Var, kind: Activation, g: &[S]) {
    if !ctx.needs(x) {
        return;
    }
    let xv = ctx.value(x);
    let yv = ctx.value(crate::Var(out));
    let dx = ctx.buf(x);
    let one = S::one();
    match kind {
        Activation::Relu => {
            for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                if v > S::zero() {
                    *d = *d + gv;
                }
            }
        }
        Activation::LeakyRelu(slope) => {
            let slope = S::of(slope);
            for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                *d = *d + if v > S::zero() { gv } else { slope * gv };
            }
        }
        Activation::Sigmoid => {
            for ((d, &gv), &y) in dx.iter_mut().zip(g).zip(yv) {
                *d = *d + gv * y * (one - y);
            }
        }
        Activation::Tanh => {
            for ((d, &gv), &y) in dx.iter_mut().zip(g).zip(yv) {
                *d = *d + gv * (one - y * y);
            }
        }
    }
}

pub(crate) fn mul_backward<S: Scalar>(ctx: &mut GradCtx<'_, S>, a: Var, b: Var, g: &[S]) {
    let (av, bv) = (ctx.value(a), ctx.value(b));
    if ctx.needs(a) {
        for ((d, &gv), &y) in ctx.buf(a).iter_mut().zip(g).zip(bv) {
            *d = *d + gv * y;
        }
    }
    if ctx.needs(b) {
        for ((d, &gv), &x) in ctx.buf(b).iter_mut().zip(g).zip(av) {
            *d = *d + gv * x;
        }
    }
}

pub(crate) fn matmul_backward<S: Scalar>(ctx: &mut GradCtx<'_, S>, a: Var, b: Var, g: &[S]) {
    let (m, k) = (ctx.shape(a)[0], ctx.shape(a)[1]);
    let n = ctx.shape(b)[1];
    let (av, bv) = (ctx.value(a), ctx.value(b));
    if ctx.needs(a) {
        matmul(g, false, bv, true, ctx.buf(a), m, n, k, true);
    }
    if ctx.needs(b) {
        matmul(av, true, g, false, ctx.buf(b), k, m, n, true);
    }
}

pub(crate) fn add_bias_backward<S: Scalar>(ctx: &mut GradCtx<'_, S>, x: Var, bias: Var, axis: usize, g: &[S]) {
    ctx.add_into(x, g);
    if ctx.needs(bias) {
        let xs = ctx.shape(x);
        let inner: usize = xs[axis + 1..].iter().product();
        let len = xs[axis];
        let db = ctx.buf(bias);
        for (k, chunk) in g.chunks_exact(inner).enumerate() {
            let s = chunk.iter().fold(S::zero(), |a, &v| a + v);
            db[k % len] = db[k % len] + s;
        }
    }
}
