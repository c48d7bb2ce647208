//! Reverse-mode autodiff tape.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and backward is a single reverse sweep. Each node keeps
//! its forward value plus whatever the op saved for its adjoint.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::ops::{self, Activation, ConvGeom};
use crate::{numel, Error, Result, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<S> {
    Leaf { param: Option<usize> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, stride: (usize, usize) },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, inv_std: Vec<S>, batch_stats: bool },
    Act { x: Var, kind: Activation },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Reshape { x: Var },
    Permute { x: Var, perm: Vec<usize> },
    MatMul { a: Var, b: Var },
    AddBias { x: Var, bias: Var, axis: usize },
    Sum { x: Var },
    SoftmaxCrossEntropy { logits: Var, probs: Vec<S>, labels: Vec<u8>, ignore: u8, count: usize },
}

impl<S> Op<S> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::MaxPool2 { .. } => "maxpool2d",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::Act { .. } => "activation",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::MatMul { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::Sum { .. } => "sum",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

pub(crate) struct Node<S> {
    pub shape: Vec<usize>,
    pub value: Vec<S>,
    pub op: Op<S>,
    pub needs_grad: bool,
}

/// Records one forward pass. Confined to a single thread; drop it after
/// reading the gradients.
pub struct Tape<S> {
    pub(crate) nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<S>, op: Op<S>, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { shape, value, op, needs_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf { param: None }, false)
    }

    /// Records a leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf { param: None }, true)
    }

    /// Records a trainable parameter; its gradient is reported by
    /// [`param_grads`](Self::param_grads) under `id`.
    pub fn param(&mut self, id: usize, t: &Tensor<S>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf { param: Some(id) }, true)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor<S> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("tape nodes hold consistent shapes")
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads[v.0].as_deref()
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub(crate) fn any_needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.needs(v))
    }

    /// Gradients of parameter leaves after [`backward`](Self::backward).
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &[S])> + '_ {
        self.nodes.iter().zip(&self.grads).filter_map(|(n, g)| match (&n.op, g) {
            (Op::Leaf { param: Some(id) }, Some(g)) => Some((*id, g.as_slice())),
            _ => None,
        })
    }

    /// Sweeps the tape in reverse from a scalar `loss`, leaving gradients on
    /// every leaf that requires one. Intermediate gradients are released as
    /// soon as they have been propagated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_scaled(loss, S::one())
    }

    /// [`backward`](Self::backward) seeded with `seed` instead of 1, i.e.
    /// the gradients of `seed · loss`.
    pub fn backward_scaled(&mut self, loss: Var, seed: S) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![seed]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf { .. }) || !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            let mut ctx = GradCtx { nodes: &self.nodes, grads: &mut self.grads };
            ctx.propagate(i, &g);
        }
        Ok(())
    }
}

/// Split borrow used while propagating one node: node values are read-only,
/// gradient buffers of the parents are written.
pub(crate) struct GradCtx<'a, S> {
    pub nodes: &'a [Node<S>],
    pub grads: &'a mut [Option<Vec<S>>],
}

impl<'a, S: Scalar> GradCtx<'a, S> {
    pub fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &'a [S] {
        let nodes: &'a [Node<S>] = self.nodes;
        &nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &'a [usize] {
        let nodes: &'a [Node<S>] = self.nodes;
        &nodes[v.0].shape
    }

    /// Gradient buffer of `v`, zero-initialised on first touch.
    pub fn buf(&mut self, v: Var) -> &mut [S] {
        let len = self.nodes[v.0].value.len();
        self.grads[v.0].get_or_insert_with(|| vec![S::zero(); len])
    }

    pub fn add_into(&mut self, v: Var, g: &[S]) {
        if self.needs(v) {
            self.buf(v).iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b);
        }
    }

    fn propagate(&mut self, i: usize, g: &[S]) {
        let nodes: &'a [Node<S>] = self.nodes;
        match &nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Conv2d { x, w, b, geom } => ops::conv::conv2d_backward(self, i, *x, *w, *b, geom, g),
            Op::ConvTranspose2d { x, w, b, stride } => {
                ops::conv::conv_transpose2d_backward(self, i, *x, *w, *b, *stride, g)
            }
            Op::MaxPool2 { x, argmax } => ops::pool::maxpool2_backward(self, *x, argmax, g),
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                ops::norm::batchnorm_backward(self, *x, *gamma, *beta, xhat, inv_std, *batch_stats, g)
            }
            Op::Act { x, kind } => ops::elementwise::activation_backward(self, i, *x, *kind, g),
            Op::Add { a, b } => {
                self.add_into(*a, g);
                self.add_into(*b, g);
            }
            Op::Mul { a, b } => ops::elementwise::mul_backward(self, *a, *b, g),
            Op::Concat { inputs, axis } => ops::layout::concat_backward(self, i, inputs, *axis, g),
            Op::Narrow { x, axis, start } => ops::layout::narrow_backward(self, i, *x, *axis, *start, g),
            Op::Reshape { x } => self.add_into(*x, g),
            Op::Permute { x, perm } => ops::layout::permute_backward(self, i, *x, perm, g),
            Op::MatMul { a, b } => ops::elementwise::matmul_backward(self, *a, *b, g),
            Op::AddBias { x, bias, axis } => ops::elementwise::add_bias_backward(self, *x, *bias, *axis, g),
            Op::Sum { x } => {
                if self.needs(*x) {
                    let g0 = g[0];
                    self.buf(*x).iter_mut().for_each(|a| *a = *a + g0);
                }
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels, ignore, count } => {
                ops::loss::softmax_ce_backward(self, *logits, probs, labels, *ignore, *count, g)
            }
        }
    }
}

pub(crate) fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(shape_err!("{op}: shapes {a:?} and {b:?} differ"));
    }
    Ok(())
}
