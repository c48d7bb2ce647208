//! Flat `key=value` run configuration. Precedence is command line over file
//! over defaults; unknown keys are rejected.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stseg_core::model::{ModelConfig, Placement};
use stseg_core::synth::{AugmentConfig, SynthConfig};
use stseg_core::temporal::TemporalKind;
use stseg_core::train::TrainConfig;

use crate::error::{Error, IoContext, Result};

/// Splits `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value, got {line:?}", n + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn parse_pair(key: &str, v: &str) -> Result<(usize, usize)> {
    match parse_list::<usize>(key, v)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::Config(format!("{key}: expected two comma-separated integers, got {v:?}"))),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got {v:?}"))),
    }
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn set_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// Settings of the placement × module ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub lr: f64,
    /// Temporal unit of the repeated-frame control row.
    pub control_kind: TemporalKind,
    /// Required mIoU margin of encoder over frame-by-frame.
    pub min_gap: f64,
    /// Allowed |control − frame-by-frame| mIoU distance.
    pub control_tolerance: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            epochs: 6,
            lr: 1e-3,
            control_kind: TemporalKind::PointwiseTn,
            min_gap: 0.10,
            control_tolerance: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub synth: SynthConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub train: TrainConfig,
    pub augment: bool,
    pub aug: AugmentConfig,
    pub data: Option<PathBuf>,
    pub split: String,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub stride: usize,
    pub experiment: ExperimentConfig,
}

/// Desk-scale model used by the CLI unless configured otherwise.
pub fn desk_model() -> ModelConfig {
    ModelConfig {
        placement: Placement::Encoder,
        temporal_kind: TemporalKind::ConvLstm,
        depth: 4,
        channels: vec![8, 16, 16, 32],
        num_classes: 4,
        ..ModelConfig::default()
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: desk_model(),
            synth: SynthConfig::default(),
            n_train: 200,
            n_val: 40,
            n_test: 40,
            train: TrainConfig::default(),
            augment: true,
            aug: AugmentConfig::default(),
            data: None,
            split: "val".into(),
            checkpoint: None,
            resume: None,
            frames: None,
            stride: 2,
            experiment: ExperimentConfig::default(),
        }
    }
}

/// Model keys, shared by run configs (`model.` prefix) and the standalone
/// model file written next to checkpoints (no prefix).
const MODEL_KEYS: [&str; 10] = [
    "placement",
    "temporal_kind",
    "t",
    "depth",
    "channels",
    "num_classes",
    "input_channels",
    "leaky_slope",
    "temporal_bias",
    "temporal_dilation",
];

fn set_model(m: &mut ModelConfig, key: &str, full: &str, v: &str) -> Result<bool> {
    match key {
        "placement" => m.placement = v.parse::<Placement>()?,
        "temporal_kind" => m.temporal_kind = v.parse::<TemporalKind>()?,
        "t" => m.t = parse(full, v)?,
        "depth" => m.depth = parse(full, v)?,
        "channels" => m.channels = parse_list(full, v)?,
        "num_classes" => m.num_classes = parse(full, v)?,
        "input_channels" => m.input_channels = parse(full, v)?,
        "leaky_slope" => m.leaky_slope = parse(full, v)?,
        "temporal_bias" => m.temporal_bias = parse_bool(full, v)?,
        "temporal_dilation" => m.temporal_dilation = parse(full, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn model_entries(m: &ModelConfig) -> Vec<(&'static str, String)> {
    let values = [
        m.placement.to_string(),
        m.temporal_kind.to_string(),
        m.t.to_string(),
        m.depth.to_string(),
        join(&m.channels),
        m.num_classes.to_string(),
        m.input_channels.to_string(),
        m.leaky_slope.to_string(),
        m.temporal_bias.to_string(),
        m.temporal_dilation.to_string(),
    ];
    MODEL_KEYS.into_iter().zip(values).collect()
}

pub fn model_to_text(m: &ModelConfig) -> String {
    model_entries(m).into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Parses a model file; every key must be known, missing keys keep the
/// desk defaults.
pub fn model_from_text(text: &str) -> std::result::Result<ModelConfig, String> {
    let mut m = desk_model();
    for (k, v) in parse_kv(text)? {
        match set_model(&mut m, &k, &k, &v) {
            Ok(true) => {}
            Ok(false) => return Err(format!("unknown model key {k:?}")),
            Err(e) => return Err(e.to_string()),
        }
    }
    m.validate().map_err(|e| e.to_string())?;
    Ok(m)
}

pub fn save_model_config(path: &Path, m: &ModelConfig) -> Result<()> {
    std::fs::write(path, model_to_text(m)).at(path)
}

pub fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path).at(path)?;
    model_from_text(&text).map_err(|m| Error::format(path, m))
}

impl RunConfig {
    /// Applies one override. Unknown keys are a config error.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if let Some(mk) = key.strip_prefix("model.") {
            if set_model(&mut self.model, mk, key, v)? {
                return Ok(());
            }
        }
        let s = &mut self.synth;
        let t = &mut self.train;
        let a = &mut self.aug;
        let e = &mut self.experiment;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "synth.height" => s.height = parse(key, v)?,
            "synth.width" => s.width = parse(key, v)?,
            "synth.frame_stride" => s.frame_stride = parse(key, v)?,
            "synth.speed_min" => s.speed_min = parse(key, v)?,
            "synth.speed_max" => s.speed_max = parse(key, v)?,
            "synth.occlusion_min" => s.occlusion_min = parse(key, v)?,
            "synth.occlusion_max" => s.occlusion_max = parse(key, v)?,
            "synth.head_fraction" => s.head_fraction = parse(key, v)?,
            "synth.shape_width" => s.shape_width = parse_pair(key, v)?,
            "synth.shape_height" => s.shape_height = parse_pair(key, v)?,
            "synth.occluder_width" => s.occluder_width = parse_pair(key, v)?,
            "synth.void_border" => s.void_border = parse(key, v)?,
            "synth.n_train" => self.n_train = parse(key, v)?,
            "synth.n_val" => self.n_val = parse(key, v)?,
            "synth.n_test" => self.n_test = parse(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.weight_decay" => t.weight_decay = parse(key, v)?,
            "train.clip_norm" => t.clip_norm = parse(key, v)?,
            "train.beta1" => t.beta1 = parse(key, v)?,
            "train.beta2" => t.beta2 = parse(key, v)?,
            "train.eps" => t.eps = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.accumulate" => t.accumulate = parse(key, v)?,
            "train.checkpoint_every" => t.checkpoint_every = parse(key, v)?,
            "train.repeat_last" => t.repeat_last = parse_bool(key, v)?,
            "train.resume" => self.resume = set_path(v),
            "augment.enabled" => self.augment = parse_bool(key, v)?,
            "augment.hflip_p" => a.hflip_p = parse(key, v)?,
            "augment.brightness" => a.brightness = parse(key, v)?,
            "augment.contrast" => a.contrast = parse(key, v)?,
            "augment.blur" => a.blur = parse_bool(key, v)?,
            "augment.blur_sigma_max" => a.blur_sigma_max = parse(key, v)?,
            "data.root" => self.data = set_path(v),
            "eval.split" => self.split = v.to_string(),
            "eval.checkpoint" => self.checkpoint = set_path(v),
            "predict.frames" => self.frames = set_path(v),
            "predict.stride" => self.stride = parse(key, v)?,
            "experiment.seeds" => e.seeds = parse_list(key, v)?,
            "experiment.epochs" => e.epochs = parse(key, v)?,
            "experiment.lr" => e.lr = parse(key, v)?,
            "experiment.control_kind" => e.control_kind = v.parse::<TemporalKind>()?,
            "experiment.min_gap" => e.min_gap = parse(key, v)?,
            "experiment.control_tolerance" => e.control_tolerance = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a stable order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![("seed".into(), self.seed.to_string())];
        out.extend(model_entries(&self.model).into_iter().map(|(k, v)| (format!("model.{k}"), v)));
        let (s, t, a, e) = (&self.synth, &self.train, &self.aug, &self.experiment);
        let pair = |p: (usize, usize)| format!("{},{}", p.0, p.1);
        let rest: Vec<(&str, String)> = vec![
            ("synth.height", s.height.to_string()),
            ("synth.width", s.width.to_string()),
            ("synth.frame_stride", s.frame_stride.to_string()),
            ("synth.speed_min", s.speed_min.to_string()),
            ("synth.speed_max", s.speed_max.to_string()),
            ("synth.occlusion_min", s.occlusion_min.to_string()),
            ("synth.occlusion_max", s.occlusion_max.to_string()),
            ("synth.head_fraction", s.head_fraction.to_string()),
            ("synth.shape_width", pair(s.shape_width)),
            ("synth.shape_height", pair(s.shape_height)),
            ("synth.occluder_width", pair(s.occluder_width)),
            ("synth.void_border", s.void_border.to_string()),
            ("synth.n_train", self.n_train.to_string()),
            ("synth.n_val", self.n_val.to_string()),
            ("synth.n_test", self.n_test.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.weight_decay", t.weight_decay.to_string()),
            ("train.clip_norm", t.clip_norm.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.eps", t.eps.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.accumulate", t.accumulate.to_string()),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            ("train.repeat_last", t.repeat_last.to_string()),
            ("train.resume", opt_path(&self.resume)),
            ("augment.enabled", self.augment.to_string()),
            ("augment.hflip_p", a.hflip_p.to_string()),
            ("augment.brightness", a.brightness.to_string()),
            ("augment.contrast", a.contrast.to_string()),
            ("augment.blur", a.blur.to_string()),
            ("augment.blur_sigma_max", a.blur_sigma_max.to_string()),
            ("data.root", opt_path(&self.data)),
            ("eval.split", self.split.clone()),
            ("eval.checkpoint", opt_path(&self.checkpoint)),
            ("predict.frames", opt_path(&self.frames)),
            ("predict.stride", self.stride.to_string()),
            ("experiment.seeds", join(&e.seeds)),
            ("experiment.epochs", e.epochs.to_string()),
            ("experiment.lr", e.lr.to_string()),
            ("experiment.control_kind", e.control_kind.to_string()),
            ("experiment.min_gap", e.min_gap.to_string()),
            ("experiment.control_tolerance", e.control_tolerance.to_string()),
        ];
        out.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv(text).map_err(Error::Config)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Defaults, then the optional file, then `KEY=VALUE` overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).at(path)?;
            cfg.apply_text(&text).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                other => other,
            })?;
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("--set expects key=value, got {o:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        // the generator only runs when no dataset directory is given
        if self.data.is_none() {
            self.synth_config().validate()?;
        }
        self.train_config().validate()?;
        if self.stride == 0 {
            return Err(Error::Config("predict.stride must be positive".into()));
        }
        if self.experiment.seeds.is_empty() || self.experiment.epochs == 0 || self.experiment.lr.is_nan() || self.experiment.lr <= 0.0 {
            return Err(Error::Config("experiment needs seeds, epochs > 0 and lr > 0".into()));
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig { seed: self.seed, t: self.model.t, num_classes: self.model.num_classes, ..self.synth.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, augment: self.augment.then_some(self.aug), ..self.train.clone() }
    }
}
