//! Training loop, evaluation and sliding-window inference.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::metrics::{argmax_labels, ConfusionMatrix, EvalReport};
use crate::model::{Placement, SegModel};
use crate::ops::Mode;
use crate::optim::{clip_grad_norm, global_grad_norm, AdamConfig, AdamState};
use crate::synth::{augment_sequence, mix_seed, AugmentConfig, SequenceSample};
use crate::{Error, Result, Scalar, Tape, Tensor, VOID_LABEL};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Sequences whose gradients are averaged into one optimizer step.
    pub accumulate: usize,
    pub seed: u64,
    /// `None` disables augmentation.
    pub augment: Option<AugmentConfig>,
    /// Steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Feed frame `T` repeated `T` times instead of the real history.
    pub repeat_last: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            weight_decay: adam.weight_decay,
            clip_norm: 5.0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            epochs: 10,
            accumulate: 1,
            seed: 0,
            augment: Some(AugmentConfig::default()),
            checkpoint_every: 0,
            repeat_last: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0;
        if !positive(self.lr) || !positive(self.clip_norm) {
            return Err(Error::Config(format!("lr ({}) and clip_norm ({}) must be positive", self.lr, self.clip_norm)));
        }
        if self.accumulate == 0 {
            return Err(Error::Config("accumulate must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.weight_decay < 0.0 {
            return Err(Error::Config("adam betas must lie in [0, 1) and weight_decay ≥ 0".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }
}

/// One optimizer step as logged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub gnorm: f64,
    /// Factor applied by clipping (1 when under the threshold).
    pub clip: f64,
    /// Global gradient norm after clipping.
    pub clipped_norm: f64,
}

/// Model input for one sample: frame `T` alone for frame-by-frame models,
/// the whole sequence otherwise.
pub fn model_input<S: Scalar>(placement: Placement, sample: &SequenceSample, repeat_last: bool) -> Tensor<S> {
    let (t, h, w) = (sample.t(), sample.height(), sample.width());
    if placement == Placement::FrameByFrame {
        let last: Vec<S> = sample.frame(t - 1).iter().map(|&v| S::of(v as f64)).collect();
        return Tensor::new(&[1, 3, h, w], last).expect("frame shape");
    }
    let src = if repeat_last { sample.repeat_last() } else { sample.clone() };
    src.frames.cast()
}

/// Deterministic sample order for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch)));
    order
}

/// Model plus optimizer state; owns both exclusively while training.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<S> {
    pub model: SegModel<S>,
    pub adam: AdamState<S>,
    pub cfg: TrainConfig,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(model: SegModel<S>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(model.registry());
        Ok(Self { model, adam, cfg })
    }

    pub fn steps_done(&self) -> u64 {
        self.adam.step
    }

    fn check_sample(&self, sample: &SequenceSample) -> Result<()> {
        let mc = self.model.config();
        if sample.t() != mc.t {
            return Err(Error::Config(format!("sample has {} frames, model expects T={}", sample.t(), mc.t)));
        }
        if let Some(&bad) = sample.label.iter().find(|&&l| l != VOID_LABEL && l as usize >= mc.num_classes) {
            return Err(Error::InvalidLabel { label: bad, classes: mc.num_classes });
        }
        Ok(())
    }

    /// Forward and backward for one sequence, adding its gradients to the
    /// registry. Returns the loss.
    pub fn accumulate(&mut self, sample: &SequenceSample, scale: f64) -> Result<f64> {
        self.check_sample(sample)?;
        let placement = self.model.config().placement;
        let input = model_input::<S>(placement, sample, self.cfg.repeat_last);
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let logits = if placement == Placement::FrameByFrame {
            self.model.forward_single(&mut tape, x, Mode::Train)?
        } else {
            self.model.forward_sequence(&mut tape, x, Mode::Train)?
        };
        let loss = tape.softmax_cross_entropy(logits, &sample.label, VOID_LABEL)?;
        let value = tape.value(loss)[0].f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", self.adam.step + 1)));
        }
        tape.backward_scaled(loss, S::of(scale))?;
        self.model.registry_mut().accumulate_grads(&tape)?;
        Ok(value)
    }

    /// One optimizer step over `batch`: averaged gradients, clipping, Adam.
    pub fn step(&mut self, batch: &[&SequenceSample]) -> Result<StepLog> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        self.model.registry_mut().zero_grads();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for sample in batch {
            loss += self.accumulate(sample, scale)? * scale;
        }
        let reg = self.model.registry_mut();
        let (gnorm, clip) = clip_grad_norm(reg, self.cfg.clip_norm);
        if !gnorm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm at step {}", self.adam.step + 1)));
        }
        let clipped_norm = global_grad_norm(reg);
        self.adam.step(reg, &self.cfg.adam())?;
        Ok(StepLog { step: self.adam.step, loss, gnorm, clip, clipped_norm })
    }

    /// One pass over `data` in the seeded epoch order, with augmentation
    /// keyed by (seed, epoch, sample). `on_step` sees every log entry and
    /// may stop the epoch early by returning `false`.
    pub fn train_epoch(
        &mut self,
        data: &[SequenceSample],
        epoch: u64,
        on_step: impl FnMut(&Self, &StepLog) -> Result<bool>,
    ) -> Result<Vec<StepLog>> {
        self.train_epoch_from(data, epoch, 0, on_step)
    }

    /// Steps per epoch over `n` samples.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.cfg.accumulate)
    }

    /// [`Trainer::train_epoch`] starting at step `skip` of the epoch, for
    /// resuming mid-epoch.
    pub fn train_epoch_from(
        &mut self,
        data: &[SequenceSample],
        epoch: u64,
        skip: usize,
        mut on_step: impl FnMut(&Self, &StepLog) -> Result<bool>,
    ) -> Result<Vec<StepLog>> {
        let order = epoch_order(data.len(), self.cfg.seed, epoch);
        let mut logs = Vec::new();
        for chunk in order.chunks(self.cfg.accumulate).skip(skip) {
            let augmented: Vec<SequenceSample> = match &self.cfg.augment {
                Some(aug) => chunk
                    .iter()
                    .map(|&i| augment_sequence(&data[i], aug, mix_seed(self.cfg.seed ^ epoch.rotate_left(32), i as u64)))
                    .collect(),
                None => Vec::new(),
            };
            let batch: Vec<&SequenceSample> = if self.cfg.augment.is_some() {
                augmented.iter().collect()
            } else {
                chunk.iter().map(|&i| &data[i]).collect()
            };
            let log = self.step(&batch)?;
            logs.push(log);
            if !on_step(self, &log)? {
                break;
            }
        }
        Ok(logs)
    }
}

/// Eval-mode label map for frame `T` of one sample.
pub fn predict_labels<S: Scalar>(model: &SegModel<S>, sample: &SequenceSample, repeat_last: bool) -> Result<Vec<u8>> {
    let cfg = model.config();
    let logits = model.predict(&model_input::<S>(cfg.placement, sample, repeat_last))?;
    Ok(argmax_labels(logits.data(), cfg.num_classes))
}

/// Confusion matrix, IoU and mIoU over `data`, void pixels excluded.
pub fn evaluate<S: Scalar>(model: &SegModel<S>, data: &[SequenceSample], repeat_last: bool) -> Result<EvalReport> {
    let mut cm = ConfusionMatrix::new(model.config().num_classes);
    for sample in data {
        let pred = predict_labels(model, sample, repeat_last)?;
        cm.add(&sample.label, &pred)?;
    }
    Ok(cm.into())
}

/// Frame indices feeding output frame `t`: `t−(T−1)s, …, t−s, t`, with
/// indices before the start clamped to the first frame.
pub fn window_indices(t: usize, frames: usize, stride: usize) -> Vec<usize> {
    (0..frames).map(|k| t.saturating_sub((frames - 1 - k) * stride)).collect()
}

/// One label map per frame of `video` (`[L, 3, H, W]`), each predicted from
/// the window ending at that frame.
pub fn sliding_window_predict<S: Scalar>(model: &SegModel<S>, video: &Tensor<f32>, stride: usize) -> Result<Vec<Vec<u8>>> {
    let s = video.shape();
    if s.len() != 4 || s[1] != 3 || s[0] == 0 {
        return Err(crate::error::shape_err!("video must be [L, 3, H, W], got {s:?}"));
    }
    let (len, h, w) = (s[0], s[2], s[3]);
    let frame = 3 * h * w;
    let t = model.config().t;
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let mut data = Vec::with_capacity(t * frame);
        for j in window_indices(i, t, stride) {
            data.extend_from_slice(&video.data()[j * frame..(j + 1) * frame]);
        }
        let sample = SequenceSample::new(Tensor::new(&[t, 3, h, w], data)?, alloc::vec![VOID_LABEL; h * w])?;
        out.push(predict_labels(model, &sample, false)?);
    }
    Ok(out)
}
