//! Parameterised layers over the tape, and the registry that owns their
//! tensors.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ops::{Activation, BatchNormState, ConvGeom, Mode};
use crate::{Error, Result, Scalar, Tape, Tensor, Var};

/// Index of an entry in a [`ParamRegistry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Learnable tensors are optimised and counted; buffers (running stats) are
/// only persisted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Param,
    Buffer,
}

/// How [`ParamRegistry::init_params`] fills an entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±gain·sqrt(3/fan_in)`, gain `sqrt(2/(1+slope²))`.
    KaimingUniform { fan_in: usize, slope: f64 },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<S> {
    pub name: String,
    pub tensor: Tensor<S>,
    pub role: Role,
    pub init: Init,
}

/// Ordered, uniquely named parameter store. Order is construction order and
/// is what checkpoints rely on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamRegistry<S> {
    entries: Vec<ParamEntry<S>>,
}

impl<S: Scalar> ParamRegistry<S> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    fn add(&mut self, name: &str, shape: &[usize], role: Role, init: Init) -> Result<ParamId> {
        if self.find(name).is_some() {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.entries.push(ParamEntry { name: name.into(), tensor: Tensor::zeros(shape), role, init });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn add_param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        self.add(name, shape, Role::Param, init)
    }

    pub fn add_buffer(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        self.add(name, shape, Role::Buffer, init)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<S>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<S>] {
        &mut self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries.iter().enumerate().filter(|(_, e)| e.role == Role::Param).map(|(i, _)| ParamId(i))
    }

    /// Learnable element count; buffers excluded.
    pub fn param_count(&self) -> usize {
        self.entries.iter().filter(|e| e.role == Role::Param).map(|e| e.tensor.len()).sum()
    }

    /// Learnable element count of entries whose name starts with `prefix`.
    pub fn param_count_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.role == Role::Param && e.name.starts_with(prefix))
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Fills every entry according to its [`Init`], deterministically in `seed`.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for e in &mut self.entries {
            match e.init {
                Init::KaimingUniform { fan_in, slope } => {
                    let gain = libm::sqrt(2.0 / (1.0 + slope * slope));
                    let bound = gain * libm::sqrt(3.0 / fan_in as f64);
                    for v in e.tensor.data_mut() {
                        *v = S::of(rng.gen_range(-bound..bound));
                    }
                }
                Init::Zeros => e.tensor.data_mut().fill(S::zero()),
                Init::Ones => e.tensor.data_mut().fill(S::one()),
            }
            e.tensor.zero_grad();
        }
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    /// Adds tape gradients of bound parameters into the registry.
    pub fn accumulate_grads(&mut self, tape: &Tape<S>) -> Result<()> {
        for (id, g) in tape.param_grads() {
            self.entries[id].tensor.accumulate_grad(g)?;
        }
        Ok(())
    }

    /// Same names, shapes and roles in the same order.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name && a.role == b.role && a.tensor.shape() == b.tensor.shape()
            })
    }
}

enum RegistryRef<'a, S> {
    Mut(&'a mut ParamRegistry<S>),
    Shared(&'a ParamRegistry<S>),
}

impl<S> RegistryRef<'_, S> {
    fn get(&self) -> &ParamRegistry<S> {
        match self {
            RegistryRef::Mut(r) => r,
            RegistryRef::Shared(r) => r,
        }
    }
}

/// Per-forward binding of registry entries onto a tape.
pub struct ForwardCtx<'a, S> {
    pub tape: &'a mut Tape<S>,
    registry: RegistryRef<'a, S>,
    bound: Vec<Option<Var>>,
    pub mode: Mode,
    grads: bool,
}

impl<'a, S: Scalar> ForwardCtx<'a, S> {
    /// Training-capable context; `grads = false` binds parameters as
    /// constants.
    pub fn new(tape: &'a mut Tape<S>, registry: &'a mut ParamRegistry<S>, mode: Mode, grads: bool) -> Self {
        let bound = vec![None; registry.len()];
        Self { tape, registry: RegistryRef::Mut(registry), bound, mode, grads }
    }

    /// Like [`new`](Self::new) with gradients, but `ids[k]` resolves to the
    /// existing tape value `vars[k]` instead of the registry tensor.
    pub fn with_bindings(
        tape: &'a mut Tape<S>,
        registry: &'a mut ParamRegistry<S>,
        mode: Mode,
        ids: &[ParamId],
        vars: &[Var],
    ) -> Self {
        let mut ctx = Self::new(tape, registry, mode, true);
        for (id, &v) in ids.iter().zip(vars) {
            ctx.bound[id.0] = Some(v);
        }
        ctx
    }

    /// Read-only inference context (eval mode, no gradients).
    pub fn frozen(tape: &'a mut Tape<S>, registry: &'a ParamRegistry<S>) -> Self {
        let bound = vec![None; registry.len()];
        Self { tape, registry: RegistryRef::Shared(registry), bound, mode: Mode::Eval, grads: false }
    }

    /// Tape handle of a parameter, recorded on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = &self.registry.get().entries[id.0].tensor;
        let v = if self.grads { self.tape.param(id.0, t) } else { self.tape.constant(t.clone()) };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn bn(&mut self, x: Var, bn: &BnParams) -> Result<Var> {
        let (gamma, beta) = (self.p(bn.gamma), self.p(bn.beta));
        match &mut self.registry {
            RegistryRef::Mut(reg) => {
                let mut state = BatchNormState {
                    mean: core::mem::take(reg.get_mut(bn.running_mean).data_vec_mut()),
                    var: core::mem::take(reg.get_mut(bn.running_var).data_vec_mut()),
                };
                let out = self.tape.batchnorm2d(x, gamma, beta, &mut state, self.mode);
                *reg.get_mut(bn.running_mean).data_vec_mut() = state.mean;
                *reg.get_mut(bn.running_var).data_vec_mut() = state.var;
                out
            }
            RegistryRef::Shared(reg) => {
                if self.mode == Mode::Train {
                    return Err(Error::Contract("train-mode batch norm needs a mutable registry".into()));
                }
                let mut state = BatchNormState {
                    mean: reg.get(bn.running_mean).data().to_vec(),
                    var: reg.get(bn.running_var).data().to_vec(),
                };
                self.tape.batchnorm2d(x, gamma, beta, &mut state, Mode::Eval)
            }
        }
    }

    pub fn conv(&mut self, x: Var, conv: &ConvParams) -> Result<Var> {
        let w = self.p(conv.weight);
        let b = conv.bias.map(|b| self.p(b));
        self.tape.conv2d(x, w, b, conv.geom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BnParams {
    pub fn register<S: Scalar>(reg: &mut ParamRegistry<S>, prefix: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: reg.add_param(&format!("{prefix}.gamma"), &[channels], Init::Ones)?,
            beta: reg.add_param(&format!("{prefix}.beta"), &[channels], Init::Zeros)?,
            running_mean: reg.add_buffer(&format!("{prefix}.running_mean"), &[channels], Init::Zeros)?,
            running_var: reg.add_buffer(&format!("{prefix}.running_var"), &[channels], Init::Ones)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
}

impl ConvParams {
    /// Square `k × k` convolution `in_c → out_c` with Kaiming-uniform weights.
    #[allow(clippy::too_many_arguments)]
    pub fn register<S: Scalar>(
        reg: &mut ParamRegistry<S>,
        prefix: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        geom: ConvGeom,
        bias: bool,
        slope: f64,
    ) -> Result<Self> {
        let weight = reg.add_param(
            &format!("{prefix}.weight"),
            &[out_c, in_c, k, k],
            Init::KaimingUniform { fan_in: in_c * k * k, slope },
        )?;
        let bias = if bias { Some(reg.add_param(&format!("{prefix}.bias"), &[out_c], Init::Zeros)?) } else { None };
        Ok(Self { weight, bias, geom })
    }
}

/// 3×3 conv (pad 1) → batch norm → activation, optionally followed by 2×2
/// max pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: ConvParams,
    pub bn: BnParams,
    pub act: Activation,
    pub pool: bool,
    pub in_c: usize,
    pub out_c: usize,
}

impl ConvBlock {
    pub fn register<S: Scalar>(
        reg: &mut ParamRegistry<S>,
        prefix: &str,
        in_c: usize,
        out_c: usize,
        act: Activation,
        pool: bool,
    ) -> Result<Self> {
        let slope = match act {
            Activation::LeakyRelu(s) => s,
            _ => 0.0,
        };
        let conv = ConvParams::register(reg, &format!("{prefix}.conv"), in_c, out_c, 3, ConvGeom::padded(1), true, slope)?;
        let bn = BnParams::register(reg, &format!("{prefix}.bn"), out_c)?;
        Ok(Self { conv, bn, act, pool, in_c, out_c })
    }

    /// Pre-pool features: conv → BN → activation.
    pub fn features<S: Scalar>(&self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<Var> {
        let y = ctx.conv(x, &self.conv)?;
        let y = ctx.bn(y, &self.bn)?;
        Ok(ctx.tape.activation(y, self.act))
    }

    /// Returns `(features, pooled)`; `pooled` equals `features` when the
    /// block does not pool.
    pub fn forward<S: Scalar>(&self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<(Var, Var)> {
        let f = self.features(ctx, x)?;
        let pooled = if self.pool { ctx.tape.maxpool2d(f)? } else { f };
        Ok((f, pooled))
    }
}

/// Stride-2 transposed conv (kernel 2) → BN → ReLU, concat with the skip
/// features, then 3×3 conv → BN → ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderBlock {
    pub up_weight: ParamId,
    pub up_bias: ParamId,
    pub up_bn: BnParams,
    pub conv: ConvParams,
    pub conv_bn: BnParams,
    pub in_c: usize,
    pub skip_c: usize,
    pub out_c: usize,
}

impl DecoderBlock {
    pub fn register<S: Scalar>(
        reg: &mut ParamRegistry<S>,
        prefix: &str,
        in_c: usize,
        skip_c: usize,
        out_c: usize,
    ) -> Result<Self> {
        let up_weight = reg.add_param(
            &format!("{prefix}.up.weight"),
            &[in_c, out_c, 2, 2],
            Init::KaimingUniform { fan_in: in_c, slope: 0.0 },
        )?;
        let up_bias = reg.add_param(&format!("{prefix}.up.bias"), &[out_c], Init::Zeros)?;
        let up_bn = BnParams::register(reg, &format!("{prefix}.up_bn"), out_c)?;
        let conv = ConvParams::register(
            reg,
            &format!("{prefix}.conv"),
            out_c + skip_c,
            out_c,
            3,
            ConvGeom::padded(1),
            true,
            0.0,
        )?;
        let conv_bn = BnParams::register(reg, &format!("{prefix}.conv_bn"), out_c)?;
        Ok(Self { up_weight, up_bias, up_bn, conv, conv_bn, in_c, skip_c, out_c })
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut ForwardCtx<'_, S>, x: Var, skip: Var) -> Result<Var> {
        let (xs, ss) = (ctx.tape.shape(x), ctx.tape.shape(skip));
        if xs.len() != 4 || ss.len() != 4 || ss[2] != 2 * xs[2] || ss[3] != 2 * xs[3] || ss[0] != xs[0] {
            return Err(crate::error::shape_err!("decoder: skip {ss:?} is not twice the spatial size of {xs:?}"));
        }
        let (w, b) = (ctx.p(self.up_weight), ctx.p(self.up_bias));
        let up = ctx.tape.conv_transpose2d(x, w, Some(b), (2, 2))?;
        let up = ctx.bn(up, &self.up_bn)?;
        let up = ctx.tape.relu(up);
        let cat = ctx.tape.concat(&[up, skip], 1)?;
        let y = ctx.conv(cat, &self.conv)?;
        let y = ctx.bn(y, &self.conv_bn)?;
        Ok(ctx.tape.relu(y))
    }
}
