//! U-Net segmentation models with the temporal-unit placements:
//! frame-by-frame, bottleneck, every skip level, and encoder propagation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::shape_err;
use crate::nn::{ConvBlock, ConvParams, DecoderBlock, ForwardCtx, ParamRegistry};
use crate::ops::{Activation, ConvGeom, Mode};
use crate::temporal::{temporal_param_count, TemporalKind, TemporalUnit, TemporalUnitConfig};
use crate::{Error, Result, Scalar, Tape, Tensor, Var};

/// Where temporal units sit in the U-Net.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Placement {
    /// No temporal units; each frame is segmented on its own.
    FrameByFrame,
    /// One unit between encoder and decoder.
    Bottleneck,
    /// A unit on every skip level plus the bottleneck; the encoder itself
    /// stays per-frame.
    Skip,
    /// Like `Skip`, but the temporally mixed sequence also feeds the next
    /// encoder block.
    Encoder,
}

impl Placement {
    pub const ALL: [Placement; 4] = [Placement::FrameByFrame, Placement::Bottleneck, Placement::Skip, Placement::Encoder];

    pub fn as_str(self) -> &'static str {
        match self {
            Placement::FrameByFrame => "frame_by_frame",
            Placement::Bottleneck => "bottleneck",
            Placement::Skip => "skip",
            Placement::Encoder => "encoder",
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame_by_frame" => Ok(Placement::FrameByFrame),
            "bottleneck" => Ok(Placement::Bottleneck),
            "skip" => Ok(Placement::Skip),
            "encoder" => Ok(Placement::Encoder),
            _ => Err(Error::Config(format!("unknown placement {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub placement: Placement,
    /// Ignored for frame-by-frame models.
    pub temporal_kind: TemporalKind,
    pub t: usize,
    pub depth: usize,
    /// Output channels of each encoder block.
    pub channels: Vec<usize>,
    pub num_classes: usize,
    pub input_channels: usize,
    pub leaky_slope: f64,
    pub temporal_bias: bool,
    pub temporal_dilation: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            placement: Placement::Encoder,
            temporal_kind: TemporalKind::ConvLstm,
            t: 4,
            depth: 6,
            channels: vec![32, 64, 128, 256, 512, 512],
            num_classes: 19,
            input_channels: 3,
            leaky_slope: Activation::DEFAULT_LEAKY_SLOPE,
            temporal_bias: true,
            temporal_dilation: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != self.depth {
            return Err(Error::Config(format!(
                "channels lists {} entries for depth {}",
                self.channels.len(),
                self.depth
            )));
        }
        if self.depth == 0 || self.t == 0 || self.num_classes < 2 || self.input_channels == 0 {
            return Err(Error::Config(format!(
                "need depth ≥ 1, T ≥ 1, num_classes ≥ 2, input_channels ≥ 1 (got {}, {}, {}, {})",
                self.depth, self.t, self.num_classes, self.input_channels
            )));
        }
        if self.channels.contains(&0) || self.temporal_dilation == 0 {
            return Err(Error::Config("channel counts and dilation must be positive".into()));
        }
        Ok(())
    }

    /// Number of temporal units the placement calls for.
    pub fn temporal_unit_count(&self) -> usize {
        match self.placement {
            Placement::FrameByFrame => 0,
            Placement::Bottleneck => 1,
            Placement::Skip | Placement::Encoder => self.depth + 1,
        }
    }

    fn unit_config(&self, c: usize) -> TemporalUnitConfig {
        let mut u = TemporalUnitConfig::new(self.temporal_kind, self.t, c);
        u.bias = self.temporal_bias;
        u.dilation = self.temporal_dilation;
        u
    }

    /// Frames consumed per prediction.
    pub fn frames(&self) -> usize {
        if self.placement == Placement::FrameByFrame {
            1
        } else {
            self.t
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layers {
    encoder: Vec<ConvBlock>,
    bottleneck: ConvBlock,
    skip_units: Vec<Option<TemporalUnit>>,
    bottleneck_unit: Option<TemporalUnit>,
    /// `decoder[l]` upsamples into level `l`.
    decoder: Vec<DecoderBlock>,
    classifier: ConvParams,
}

/// A built model: configuration, layer wiring and the parameter registry.
#[derive(Debug, Clone, PartialEq)]
pub struct SegModel<S> {
    cfg: ModelConfig,
    registry: ParamRegistry<S>,
    layers: Layers,
}

impl<S: Scalar> SegModel<S> {
    /// Builds and initialises a model; equal seeds give bit-identical
    /// parameters.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut reg = ParamRegistry::new();
        let leaky = Activation::LeakyRelu(cfg.leaky_slope);
        let mut encoder = Vec::with_capacity(cfg.depth);
        let mut in_c = cfg.input_channels;
        for (l, &c) in cfg.channels.iter().enumerate() {
            encoder.push(ConvBlock::register(&mut reg, &format!("enc{l}"), in_c, c, leaky, true)?);
            in_c = c;
        }
        let deepest = cfg.channels[cfg.depth - 1];
        let bottleneck = ConvBlock::register(&mut reg, "bottleneck", deepest, deepest, leaky, false)?;
        let temporal_levels = matches!(cfg.placement, Placement::Skip | Placement::Encoder);
        let mut skip_units = Vec::with_capacity(cfg.depth);
        for (l, &c) in cfg.channels.iter().enumerate() {
            skip_units.push(if temporal_levels {
                Some(TemporalUnit::register(&mut reg, &format!("temporal{l}"), cfg.unit_config(c))?)
            } else {
                None
            });
        }
        let bottleneck_unit = if cfg.placement == Placement::FrameByFrame {
            None
        } else {
            Some(TemporalUnit::register(&mut reg, "temporal_bottleneck", cfg.unit_config(deepest))?)
        };
        let mut decoder = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let in_c = if l + 1 == cfg.depth { deepest } else { cfg.channels[l + 1] };
            let c = cfg.channels[l];
            decoder.push(DecoderBlock::register(&mut reg, &format!("dec{l}"), in_c, c, c)?);
        }
        let classifier = ConvParams::register(
            &mut reg,
            "classifier",
            cfg.channels[0],
            cfg.num_classes,
            1,
            ConvGeom::default(),
            true,
            1.0,
        )?;
        reg.init_params(seed);
        let layers = Layers { encoder, bottleneck, skip_units, bottleneck_unit, decoder, classifier };
        Ok(Self { cfg: cfg.clone(), registry: reg, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn registry(&self) -> &ParamRegistry<S> {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut ParamRegistry<S> {
        &mut self.registry
    }

    /// Temporal units in level order, bottleneck last.
    pub fn temporal_units(&self) -> Vec<&TemporalUnit> {
        self.layers.skip_units.iter().flatten().chain(self.layers.bottleneck_unit.as_ref()).collect()
    }

    fn check_input(&self, shape: &[usize], rows: usize) -> Result<()> {
        let scale = 1usize << self.cfg.depth;
        if shape.len() != 4 || shape[1] != self.cfg.input_channels || !shape[0].is_multiple_of(rows) {
            return Err(shape_err!(
                "model input {shape:?} must be [k·{rows}, {}, H, W]",
                self.cfg.input_channels
            ));
        }
        if !shape[2].is_multiple_of(scale) || !shape[3].is_multiple_of(scale) {
            return Err(shape_err!("input {}x{} not divisible by 2^{}", shape[2], shape[3], self.cfg.depth));
        }
        Ok(())
    }

    /// Single-frame U-Net pass: `[N, C_in, H, W] → [N, classes, H, W]`.
    pub fn forward_single(&mut self, tape: &mut Tape<S>, image: Var, mode: Mode) -> Result<Var> {
        self.check_input(tape.shape(image), 1)?;
        let mut ctx = ForwardCtx::new(tape, &mut self.registry, mode, true);
        self.layers.run(&mut ctx, &self.cfg, image, 1, true)
    }

    /// Sequence pass over time-major frames `[T·N, C_in, H, W]`; returns
    /// logits for frame `T` only. A frame-by-frame model reads frame `T`
    /// and ignores the rest.
    pub fn forward_sequence(&mut self, tape: &mut Tape<S>, frames: Var, mode: Mode) -> Result<Var> {
        self.check_input(tape.shape(frames), self.cfg.t)?;
        let mut ctx = ForwardCtx::new(tape, &mut self.registry, mode, true);
        self.layers.run(&mut ctx, &self.cfg, frames, self.cfg.t, false)
    }

    /// Eval-mode logits for frame `T` of one sequence `[T, C_in, H, W]`
    /// (`[1, C_in, H, W]` for frame-by-frame models also accepted).
    pub fn predict(&self, frames: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let t = if self.cfg.placement == Placement::FrameByFrame && frames.shape().first() == Some(&1) {
            1
        } else {
            self.cfg.t
        };
        self.check_input(frames.shape(), t)?;
        let x = tape.constant(frames.clone());
        let mut ctx = ForwardCtx::frozen(&mut tape, &self.registry);
        let out = self.layers.run(&mut ctx, &self.cfg, x, t, t == 1)?;
        Ok(tape.tensor(out))
    }

    /// Per-level encoder features of each frame (eval mode, no temporal
    /// mixing). Used to check spatial weight sharing.
    pub fn encoder_features(&self, frames: &Tensor<S>) -> Result<Vec<Tensor<S>>> {
        let mut tape = Tape::new();
        self.check_input(frames.shape(), 1)?;
        let mut x = tape.constant(frames.clone());
        let mut ctx = ForwardCtx::frozen(&mut tape, &self.registry);
        let mut feats = Vec::with_capacity(self.cfg.depth);
        for block in &self.layers.encoder {
            let (f, pooled) = block.forward(&mut ctx, x)?;
            feats.push(f);
            x = pooled;
        }
        Ok(feats.into_iter().map(|f| tape.tensor(f)).collect())
    }

    /// Learnable parameter count.
    pub fn param_count(&self) -> usize {
        self.registry.param_count()
    }

    /// Per-component learnable counts plus the nominal temporal formulas.
    pub fn param_report(&self) -> ParamReport {
        let reg = &self.registry;
        let mut rows = Vec::new();
        for l in 0..self.cfg.depth {
            let spatial = reg.param_count_with_prefix(&format!("enc{l}.")) + reg.param_count_with_prefix(&format!("dec{l}."));
            let unit = self.layers.skip_units[l].as_ref();
            rows.push(ParamRow {
                component: format!("level{l}"),
                spatial,
                temporal: reg.param_count_with_prefix(&format!("temporal{l}.")),
                nominal: unit.map(|u| temporal_param_count(&u.cfg)),
            });
        }
        rows.push(ParamRow {
            component: "bottleneck".into(),
            spatial: reg.param_count_with_prefix("bottleneck."),
            temporal: reg.param_count_with_prefix("temporal_bottleneck."),
            nominal: self.layers.bottleneck_unit.as_ref().map(|u| temporal_param_count(&u.cfg)),
        });
        rows.push(ParamRow {
            component: "classifier".into(),
            spatial: reg.param_count_with_prefix("classifier."),
            temporal: 0,
            nominal: None,
        });
        let spatial_total = rows.iter().map(|r| r.spatial).sum();
        let temporal_total = rows.iter().map(|r| r.temporal).sum();
        ParamReport { rows, spatial_total, temporal_total, total: reg.param_count() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRow {
    pub component: String,
    pub spatial: usize,
    pub temporal: usize,
    pub nominal: Option<crate::temporal::TemporalParamCount>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamReport {
    pub rows: Vec<ParamRow>,
    pub spatial_total: usize,
    pub temporal_total: usize,
    pub total: usize,
}

impl Layers {
    /// Shared forward. `frames` is time-major with `t` steps; `single`
    /// bypasses every temporal unit.
    fn run<S: Scalar>(
        &self,
        ctx: &mut ForwardCtx<'_, S>,
        cfg: &ModelConfig,
        frames: Var,
        t: usize,
        single: bool,
    ) -> Result<Var> {
        let rows = ctx.tape.shape(frames)[0];
        let n = rows / t;
        let last = |ctx: &mut ForwardCtx<'_, S>, v: Var| -> Result<Var> {
            if t == 1 {
                Ok(v)
            } else {
                ctx.tape.narrow(v, 0, (t - 1) * n, n)
            }
        };
        let placement = if single { Placement::FrameByFrame } else { cfg.placement };
        let mut x = frames;
        if placement == Placement::FrameByFrame && t > 1 {
            x = last(ctx, x)?;
        }
        let mut skips = Vec::with_capacity(cfg.depth);
        for (block, unit) in self.encoder.iter().zip(&self.skip_units) {
            let f = block.features(ctx, x)?;
            match (placement, unit) {
                (Placement::Skip, Some(unit)) => {
                    let mixed = unit.forward(ctx, f)?;
                    skips.push(last(ctx, mixed)?);
                    x = ctx.tape.maxpool2d(f)?;
                }
                (Placement::Encoder, Some(unit)) => {
                    let mixed = unit.forward(ctx, f)?;
                    skips.push(last(ctx, mixed)?);
                    x = ctx.tape.maxpool2d(mixed)?;
                }
                (Placement::FrameByFrame, _) => {
                    skips.push(f);
                    x = ctx.tape.maxpool2d(f)?;
                }
                _ => {
                    skips.push(last(ctx, f)?);
                    x = ctx.tape.maxpool2d(f)?;
                }
            }
        }
        let mut y = self.bottleneck.features(ctx, x)?;
        if placement != Placement::FrameByFrame {
            if let Some(unit) = &self.bottleneck_unit {
                y = unit.forward(ctx, y)?;
            }
            y = last(ctx, y)?;
        }
        for (block, skip) in self.decoder.iter().zip(skips).rev() {
            y = block.forward(ctx, y, skip)?;
        }
        ctx.conv(y, &self.classifier)
    }
}
