//! Temporal units. Each maps a time-major feature sequence `[T·N, C, H, W]`
//! (frame `t` of batch item `n` at row `t·N + n`) to a sequence of the same
//! shape.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::shape_err;
use crate::nn::{ForwardCtx, Init, ParamId, ParamRegistry};
use crate::ops::ConvGeom;
use crate::{Error, Result, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemporalKind {
    ConvLstm,
    PointwiseTn,
    Tn2dhw,
}

impl TemporalKind {
    pub const ALL: [TemporalKind; 3] = [TemporalKind::PointwiseTn, TemporalKind::Tn2dhw, TemporalKind::ConvLstm];

    pub fn as_str(self) -> &'static str {
        match self {
            TemporalKind::ConvLstm => "convlstm",
            TemporalKind::PointwiseTn => "pointwise_tn",
            TemporalKind::Tn2dhw => "tn_2dhw",
        }
    }

    /// Spatial kernel used by default: 3 for ConvLSTM, 2 for 2DHW, 1 for
    /// pointwise.
    pub fn default_kernel(self) -> usize {
        match self {
            TemporalKind::ConvLstm => 3,
            TemporalKind::PointwiseTn => 1,
            TemporalKind::Tn2dhw => 2,
        }
    }
}

impl fmt::Display for TemporalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemporalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convlstm" => Ok(TemporalKind::ConvLstm),
            "pointwise_tn" | "pointwise" => Ok(TemporalKind::PointwiseTn),
            "tn_2dhw" | "2dhw" => Ok(TemporalKind::Tn2dhw),
            _ => Err(Error::Config(format!("unknown temporal kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalUnitConfig {
    pub kind: TemporalKind,
    /// Sequence length.
    pub t: usize,
    /// Feature channels (hidden channels for ConvLSTM).
    pub c: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub bias: bool,
}

impl TemporalUnitConfig {
    pub fn new(kind: TemporalKind, t: usize, c: usize) -> Self {
        Self { kind, t, c, kernel: kind.default_kernel(), dilation: 1, bias: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.c == 0 || self.dilation == 0 {
            return Err(Error::Config(format!("temporal unit needs positive T, C, dilation: {self:?}")));
        }
        let ok = match self.kind {
            TemporalKind::ConvLstm => self.kernel % 2 == 1,
            TemporalKind::PointwiseTn => self.kernel == 1,
            TemporalKind::Tn2dhw => self.kernel >= 1,
        };
        if !ok {
            return Err(Error::Config(format!("kernel {} not valid for {}", self.kernel, self.kind)));
        }
        Ok(())
    }
}

/// Implemented learnable counts next to the closed-form figure quoted for
/// each unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalParamCount {
    pub weights: usize,
    pub biases: usize,
    /// Weights of one of the two TN layers; `None` for ConvLSTM.
    pub per_layer_weights: Option<usize>,
    /// Nominal count: `4C²K²`, `T²` or `T²C²K²`.
    pub nominal: usize,
    pub nominal_formula: &'static str,
}

impl TemporalParamCount {
    pub fn total(&self) -> usize {
        self.weights + self.biases
    }
}

pub fn temporal_param_count(cfg: &TemporalUnitConfig) -> TemporalParamCount {
    let (t, c, k) = (cfg.t, cfg.c, cfg.kernel);
    let bias = |n: usize| if cfg.bias { n } else { 0 };
    match cfg.kind {
        TemporalKind::ConvLstm => TemporalParamCount {
            // gates read [x, h] (2C) and emit i, f, g, o (4C)
            weights: 4 * c * 2 * c * k * k,
            biases: bias(4 * c),
            per_layer_weights: None,
            nominal: 4 * c * c * k * k,
            nominal_formula: "4C^2K^2",
        },
        TemporalKind::PointwiseTn => TemporalParamCount {
            weights: 2 * t * t,
            biases: bias(2 * t),
            per_layer_weights: Some(t * t),
            nominal: t * t,
            nominal_formula: "T^2",
        },
        TemporalKind::Tn2dhw => {
            let layer = (t * c) * (t * c) * k * k;
            TemporalParamCount {
                weights: 2 * layer,
                biases: bias(2 * t * c),
                per_layer_weights: Some(layer),
                nominal: layer,
                nominal_formula: "T^2C^2K^2",
            }
        }
    }
}

fn check_sequence<S: Scalar>(tape: &Tape<S>, seq: Var, t: usize, c: usize) -> Result<(usize, usize, usize)> {
    let s = tape.shape(seq);
    if s.len() != 4 || t == 0 || !s[0].is_multiple_of(t) || s[1] != c {
        return Err(shape_err!("temporal unit (T={t}, C={c}) cannot consume sequence {s:?}"));
    }
    Ok((s[0] / t, s[2], s[3]))
}

/// Hidden and cell state of a ConvLSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLstmState {
    pub h: Var,
    pub c: Var,
}

impl ConvLstmState {
    pub fn zeros<S: Scalar>(tape: &mut Tape<S>, shape: &[usize]) -> Self {
        let h = tape.constant(Tensor::zeros(shape));
        let c = tape.constant(Tensor::zeros(shape));
        Self { h, c }
    }
}

/// One ConvLSTM step. `x` and the state are `[N, C, H, W]`; `weight` is
/// `[4C, 2C, K, K]` over the channel concat `[x, h]`, gate order i, f, g, o.
pub fn convlstm_cell<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    state: ConvLstmState,
    weight: Var,
    bias: Option<Var>,
    dilation: usize,
) -> Result<ConvLstmState> {
    let xs = tape.shape(x).to_vec();
    if xs.len() != 4 || tape.shape(state.h) != xs.as_slice() || tape.shape(state.c) != xs.as_slice() {
        return Err(shape_err!(
            "convlstm: input {xs:?} and state {:?}/{:?} must agree",
            tape.shape(state.h),
            tape.shape(state.c)
        ));
    }
    let c = xs[1];
    let ws = tape.shape(weight);
    if ws.len() != 4 || ws[0] != 4 * c || ws[1] != 2 * c || ws[2] != ws[3] || ws[2].is_multiple_of(2) {
        return Err(shape_err!("convlstm: weight {ws:?} does not fit {c} channels"));
    }
    let pad = dilation * (ws[2] - 1) / 2;
    let geom = ConvGeom::padded(pad).with_dilation(dilation, dilation);
    let xh = tape.concat(&[x, state.h], 1)?;
    let gates = tape.conv2d(xh, weight, bias, geom)?;
    let i = tape.narrow(gates, 1, 0, c)?;
    let f = tape.narrow(gates, 1, c, c)?;
    let g = tape.narrow(gates, 1, 2 * c, c)?;
    let o = tape.narrow(gates, 1, 3 * c, c)?;
    let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
    let keep = tape.mul(f, state.c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok(ConvLstmState { h: h_next, c: c_next })
}

/// Runs the cell over `t` steps from a zero state and returns the stacked
/// hidden states.
pub fn convlstm_sequence<S: Scalar>(
    tape: &mut Tape<S>,
    seq: Var,
    t: usize,
    weight: Var,
    bias: Option<Var>,
    dilation: usize,
) -> Result<Var> {
    let c = tape.shape(seq).get(1).copied().unwrap_or(0);
    let (n, h, w) = check_sequence(tape, seq, t, c)?;
    let mut state = ConvLstmState::zeros(tape, &[n, c, h, w]);
    let mut hidden = Vec::with_capacity(t);
    for step in 0..t {
        let x = tape.narrow(seq, 0, step * n, n)?;
        state = convlstm_cell(tape, x, state, weight, bias, dilation)?;
        hidden.push(state.h);
    }
    if t == 1 {
        return Ok(hidden[0]);
    }
    tape.concat(&hidden, 0)
}

/// Pointwise temporal block: with the sequence viewed as a `T × (N·C·H·W)`
/// matrix `F`, returns `F + W₂·relu(W₁·F + b₁) + b₂`. Every spatial position
/// is mixed across time with the same `T × T` weights.
#[allow(clippy::too_many_arguments)]
pub fn pointwise_tn<S: Scalar>(
    tape: &mut Tape<S>,
    seq: Var,
    t: usize,
    w1: Var,
    b1: Option<Var>,
    w2: Var,
    b2: Option<Var>,
) -> Result<Var> {
    let shape = tape.shape(seq).to_vec();
    if shape.len() != 4 || !shape[0].is_multiple_of(t) {
        return Err(shape_err!("pointwise_tn: T={t} does not divide sequence {shape:?}"));
    }
    for w in [w1, w2] {
        if tape.shape(w) != [t, t] {
            return Err(shape_err!("pointwise_tn: weight {:?}, expected [{t}, {t}]", tape.shape(w)));
        }
    }
    let cols = tape.value(seq).len() / t;
    let f = tape.reshape(seq, &[t, cols])?;
    let mut y = tape.matmul(w1, f)?;
    if let Some(b) = b1 {
        y = tape.add_bias(y, b, 0)?;
    }
    let y = tape.relu(y);
    let mut y = tape.matmul(w2, y)?;
    if let Some(b) = b2 {
        y = tape.add_bias(y, b, 0)?;
    }
    let out = tape.add(f, y)?;
    tape.reshape(out, &shape)
}

/// 2DHW temporal block: time is folded into channels (`[N, T·C, H, W]`),
/// then conv → ReLU → conv with even-kernel padding on the bottom/right so
/// `H × W` is preserved, plus the residual input.
#[allow(clippy::too_many_arguments)]
pub fn tn_2dhw<S: Scalar>(
    tape: &mut Tape<S>,
    seq: Var,
    t: usize,
    w1: Var,
    b1: Option<Var>,
    w2: Var,
    b2: Option<Var>,
    dilation: usize,
) -> Result<Var> {
    let shape = tape.shape(seq).to_vec();
    if shape.len() != 4 || !shape[0].is_multiple_of(t) {
        return Err(shape_err!("tn_2dhw: T={t} does not divide sequence {shape:?}"));
    }
    let (n, c, h, w) = (shape[0] / t, shape[1], shape[2], shape[3]);
    let tc = t * c;
    let ws = tape.shape(w1).to_vec();
    if ws.len() != 4 || ws[0] != tc || ws[1] != tc || tape.shape(w2) != ws.as_slice() {
        return Err(shape_err!("tn_2dhw: weights {ws:?}/{:?}, expected [{tc}, {tc}, K, K]", tape.shape(w2)));
    }
    let total = dilation * (ws[2] - 1);
    let geom = ConvGeom::default()
        .with_padding([total / 2, total - total / 2, total / 2, total - total / 2])
        .with_dilation(dilation, dilation);
    let folded = if n == 1 {
        tape.reshape(seq, &[1, tc, h, w])?
    } else {
        let split = tape.reshape(seq, &[t, n, c, h, w])?;
        let batch_major = tape.permute(split, &[1, 0, 2, 3, 4])?;
        tape.reshape(batch_major, &[n, tc, h, w])?
    };
    let y = tape.conv2d(folded, w1, b1, geom)?;
    let y = tape.relu(y);
    let y = tape.conv2d(y, w2, b2, geom)?;
    let out = tape.add(folded, y)?;
    if n == 1 {
        return tape.reshape(out, &shape);
    }
    let split = tape.reshape(out, &[n, t, c, h, w])?;
    let time_major = tape.permute(split, &[1, 0, 2, 3, 4])?;
    tape.reshape(time_major, &shape)
}

#[derive(Debug, Clone, PartialEq)]
enum UnitParams {
    ConvLstm { weight: ParamId, bias: Option<ParamId> },
    Tn { w1: ParamId, b1: Option<ParamId>, w2: ParamId, b2: Option<ParamId> },
}

/// A temporal unit with its parameters registered.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalUnit {
    pub cfg: TemporalUnitConfig,
    params: UnitParams,
}

impl TemporalUnit {
    /// Registers parameters under `prefix`. TN second layers start at zero so
    /// a fresh TN block is the identity.
    pub fn register<S: Scalar>(reg: &mut ParamRegistry<S>, prefix: &str, cfg: TemporalUnitConfig) -> Result<Self> {
        cfg.validate()?;
        let (t, c, k) = (cfg.t, cfg.c, cfg.kernel);
        let bias = |reg: &mut ParamRegistry<S>, name: &str, n: usize| -> Result<Option<ParamId>> {
            if cfg.bias {
                Ok(Some(reg.add_param(&format!("{prefix}.{name}"), &[n], Init::Zeros)?))
            } else {
                Ok(None)
            }
        };
        let params = match cfg.kind {
            TemporalKind::ConvLstm => {
                let weight = reg.add_param(
                    &format!("{prefix}.gates.weight"),
                    &[4 * c, 2 * c, k, k],
                    Init::KaimingUniform { fan_in: 2 * c * k * k, slope: 1.0 },
                )?;
                UnitParams::ConvLstm { weight, bias: bias(reg, "gates.bias", 4 * c)? }
            }
            TemporalKind::PointwiseTn | TemporalKind::Tn2dhw => {
                let (shape, fan_in): (Vec<usize>, usize) = if cfg.kind == TemporalKind::PointwiseTn {
                    (alloc::vec![t, t], t)
                } else {
                    (alloc::vec![t * c, t * c, k, k], t * c * k * k)
                };
                let rows = shape[0];
                let w1 = reg.add_param(&format!("{prefix}.w1"), &shape, Init::KaimingUniform { fan_in, slope: 0.0 })?;
                let b1 = bias(reg, "b1", rows)?;
                let w2 = reg.add_param(&format!("{prefix}.w2"), &shape, Init::Zeros)?;
                let b2 = bias(reg, "b2", rows)?;
                UnitParams::Tn { w1, b1, w2, b2 }
            }
        };
        Ok(Self { cfg, params })
    }

    /// Learnable weight/bias ids in registration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        match &self.params {
            UnitParams::ConvLstm { weight, bias } => core::iter::once(*weight).chain(*bias).collect(),
            UnitParams::Tn { w1, b1, w2, b2 } => [Some(*w1), *b1, Some(*w2), *b2].into_iter().flatten().collect(),
        }
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut ForwardCtx<'_, S>, seq: Var) -> Result<Var> {
        let cfg = &self.cfg;
        check_sequence(ctx.tape, seq, cfg.t, cfg.c)?;
        match &self.params {
            UnitParams::ConvLstm { weight, bias } => {
                let w = ctx.p(*weight);
                let b = bias.map(|b| ctx.p(b));
                convlstm_sequence(ctx.tape, seq, cfg.t, w, b, cfg.dilation)
            }
            UnitParams::Tn { w1, b1, w2, b2 } => {
                let (w1, w2) = (ctx.p(*w1), ctx.p(*w2));
                let (b1, b2) = (b1.map(|b| ctx.p(b)), b2.map(|b| ctx.p(b)));
                match cfg.kind {
                    TemporalKind::PointwiseTn => pointwise_tn(ctx.tape, seq, cfg.t, w1, b1, w2, b2),
                    _ => tn_2dhw(ctx.tape, seq, cfg.t, w1, b1, w2, b2, cfg.dilation),
                }
            }
        }
    }
}
