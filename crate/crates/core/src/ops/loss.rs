use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::tape::{GradCtx, Op};
use crate::{Error, Result, Scalar, Tape, Var};

impl<S: Scalar> Tape<S> {
    /// Mean pixel-wise cross entropy of `logits [N,C,H,W]` against `labels`
    /// (`N·H·W` class ids), skipping pixels labelled `ignore`. When every
    /// pixel is ignored the loss is 0 and so is its gradient.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[u8], ignore: u8) -> Result<Var> {
        let ls = self.shape(logits);
        if ls.len() != 4 {
            return Err(shape_err!("softmax_cross_entropy: expected [N,C,H,W] logits, got {ls:?}"));
        }
        let (n, c, plane) = (ls[0], ls[1], ls[2] * ls[3]);
        if labels.len() != n * plane {
            return Err(shape_err!(
                "softmax_cross_entropy: {} labels for logits {ls:?}",
                labels.len()
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l != ignore && l as usize >= c) {
            return Err(Error::InvalidLabel { label: bad, classes: c });
        }
        let lv = self.value(logits);
        let mut probs = vec![S::zero(); lv.len()];
        let mut total = 0.0f64;
        let mut count = 0usize;
        let mut scores = vec![0.0f64; c];
        for i in 0..n {
            for p in 0..plane {
                let label = labels[i * plane + p];
                if label == ignore {
                    continue;
                }
                for (k, s) in scores.iter_mut().enumerate() {
                    *s = lv[(i * c + k) * plane + p].f64();
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|&s| libm::exp(s - max)).sum();
                let lse = max + libm::log(z);
                total += lse - scores[label as usize];
                count += 1;
                for (k, &s) in scores.iter().enumerate() {
                    probs[(i * c + k) * plane + p] = S::of(libm::exp(s - lse));
                }
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let needs = self.needs(logits) && count > 0;
        let labels: Vec<u8> = labels.to_vec();
        Ok(self.push(vec![1], vec![S::of(loss)], Op::SoftmaxCrossEntropy { logits, probs, labels, ignore, count }, needs))
    }
}

pub(crate) fn softmax_ce_backward<S: Scalar>(
    ctx: &mut GradCtx<'_, S>,
    logits: Var,
    probs: &[S],
    labels: &[u8],
    ignore: u8,
    count: usize,
    g: &[S],
) {
    if !ctx.needs(logits) || count == 0 {
        return;
    }
    let ls = ctx.shape(logits);
    let (n, c, plane) = (ls[0], ls[1], ls[2] * ls[3]);
    let scale = g[0] / S::of(count as f64);
    let d = ctx.buf(logits);
    for i in 0..n {
        for p in 0..plane {
            let label = labels[i * plane + p];
            if label == ignore {
                continue;
            }
            for k in 0..c {
                let idx = (i * c + k) * plane + p;
                let onehot = if k == label as usize { S::one() } else { S::zero() };
                d[idx] = d[idx] + scale * (probs[idx] - onehot);
            }
        }
    }
}
