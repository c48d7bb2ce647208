//! Adam with L2 weight decay folded into the gradient, and global-norm
//! gradient clipping.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::nn::{ParamId, ParamRegistry};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient λ; `λ·w` is added to the gradient before the moments.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 5e-4 }
    }
}

/// First/second moments per learnable parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub step: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    ids: Vec<ParamId>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(reg: &ParamRegistry<S>) -> Self {
        let ids: Vec<ParamId> = reg.param_ids().collect();
        let zeros = || ids.iter().map(|&id| vec![S::zero(); reg.get(id).len()]).collect::<Vec<_>>();
        Self { step: 0, m: zeros(), v: zeros(), ids }
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.ids
    }

    /// One bias-corrected Adam update over every learnable parameter, then
    /// zeroes the gradients. Parameters without a gradient are treated as
    /// having gradient 0 (weight decay still applies).
    pub fn step(&mut self, reg: &mut ParamRegistry<S>, cfg: &AdamConfig) -> Result<()> {
        for &id in &self.ids {
            if let Some(g) = reg.get(id).grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of {}", reg.name(id))));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
        for (k, &id) in self.ids.iter().enumerate() {
            let tensor = reg.get_mut(id);
            let grad = tensor.grad().map(|g| g.to_vec());
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, w) in tensor.data_mut().iter_mut().enumerate() {
                let wf = w.f64();
                let g = grad.as_ref().map_or(0.0, |g| g[i].f64()) + cfg.weight_decay * wf;
                let mi = cfg.beta1 * m[i].f64() + (1.0 - cfg.beta1) * g;
                let vi = cfg.beta2 * v[i].f64() + (1.0 - cfg.beta2) * g * g;
                m[i] = S::of(mi);
                v[i] = S::of(vi);
                let update = cfg.lr * (mi / bc1) / (libm::sqrt(vi / bc2) + cfg.eps);
                *w = S::of(wf - update);
            }
            tensor.zero_grad();
        }
        Ok(())
    }
}

/// Global L2 norm over all learnable gradients.
pub fn global_grad_norm<S: Scalar>(reg: &ParamRegistry<S>) -> f64 {
    let sq: f64 = reg
        .param_ids()
        .filter_map(|id| reg.get(id).grad())
        .flat_map(|g| g.iter().map(|v| v.f64() * v.f64()))
        .sum();
    libm::sqrt(sq)
}

/// Scales all gradients by `max_norm / norm` when the global norm exceeds
/// `max_norm`. Returns `(pre-clip norm, applied factor)`.
pub fn clip_grad_norm<S: Scalar>(reg: &mut ParamRegistry<S>, max_norm: f64) -> (f64, f64) {
    let norm = global_grad_norm(reg);
    // NaN norms fall through untouched
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(norm > max_norm) {
        return (norm, 1.0);
    }
    let factor = max_norm / norm;
    let ids: Vec<ParamId> = reg.param_ids().collect();
    for id in ids {
        if let Some(g) = reg.get_mut(id).grad_mut() {
            g.iter_mut().for_each(|v| *v = S::of(v.f64() * factor));
        }
    }
    (norm, factor)
}
