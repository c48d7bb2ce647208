//! Synthetic occluded-moving-shapes video benchmark.
//!
//! Each sequence shows one rectangle sliding horizontally behind a static
//! occluder band. The rectangle's leading "head" is red for class A and blue
//! for class B; the rest of the body is identical. By the labelled final
//! frame the head is hidden, so the visible part of the shape is the same
//! for both classes and only earlier frames tell them apart.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, Tensor, VOID_LABEL};

pub const CLASS_BACKGROUND: u8 = 0;
pub const CLASS_OCCLUDER: u8 = 1;
pub const CLASS_A: u8 = 2;
pub const CLASS_B: u8 = 3;

const BODY_RGB: [f32; 3] = [0.9, 0.8, 0.2];
const HEAD_A_RGB: [f32; 3] = [0.85, 0.15, 0.15];
const HEAD_B_RGB: [f32; 3] = [0.15, 0.25, 0.85];
const OCCLUDER_RGB: [f32; 3] = [0.62, 0.62, 0.68];

/// SplitMix64 finaliser, used to derive independent per-sample seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Frames per sample.
    pub t: usize,
    /// Raw-frame gap between sampled frames.
    pub frame_stride: usize,
    pub num_classes: usize,
    /// Speed range in px per raw frame; raised when needed so the head is
    /// fully visible in the first sampled frame.
    pub speed_min: usize,
    pub speed_max: usize,
    /// Fraction of the shape hidden at the final frame.
    pub occlusion_min: f64,
    pub occlusion_max: f64,
    /// Fraction of the shape width that carries the class colour.
    pub head_fraction: f64,
    pub shape_width: (usize, usize),
    pub shape_height: (usize, usize),
    pub occluder_width: (usize, usize),
    /// Width of the void frame around the label map.
    pub void_border: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 128,
            t: 4,
            frame_stride: 2,
            num_classes: 4,
            speed_min: 2,
            speed_max: 5,
            occlusion_min: 0.7,
            occlusion_max: 0.95,
            head_fraction: 0.4,
            shape_width: (24, 36),
            shape_height: (14, 24),
            occluder_width: (36, 48),
            void_border: 1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("synth: {msg}")));
        if self.t == 0 || self.frame_stride == 0 {
            return bad("T and frame_stride must be positive");
        }
        if self.num_classes != 4 {
            return bad("the occlusion benchmark has exactly 4 classes");
        }
        if !(0.0..1.0).contains(&self.occlusion_min) || !(self.occlusion_min..1.0).contains(&self.occlusion_max) {
            return bad("need 0 ≤ occlusion_min ≤ occlusion_max < 1");
        }
        if !(0.0..1.0).contains(&self.head_fraction) {
            return bad("head_fraction must be in [0, 1)");
        }
        for (name, (lo, hi)) in [
            ("shape_width", self.shape_width),
            ("shape_height", self.shape_height),
            ("occluder_width", self.occluder_width),
        ] {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("synth: bad {name} range {lo}..={hi}")));
            }
        }
        if self.speed_min > self.speed_max {
            return bad("speed_min > speed_max");
        }
        if self.shape_height.1 + 2 * self.void_border > self.height {
            return bad("shape does not fit vertically");
        }
        if libm::ceil(self.occlusion_max * self.shape_width.1 as f64) as usize > self.occluder_width.0 {
            return bad("occluder narrower than the hidden part of the shape");
        }
        Ok(())
    }
}

/// `T` frames in `[0, 1]` plus the label map of the last frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    /// `[T, 3, H, W]`.
    pub frames: Tensor<f32>,
    /// `H·W` class ids of frame `T`, void = 255.
    pub label: Vec<u8>,
}

impl SequenceSample {
    pub fn new(frames: Tensor<f32>, label: Vec<u8>) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 4 || s[1] != 3 || label.len() != s[2] * s[3] {
            return Err(crate::error::shape_err!("sample frames {s:?} with {} labels", label.len()));
        }
        Ok(Self { frames, label })
    }

    pub fn t(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    /// Frame `k` as `[3, H, W]` values.
    pub fn frame(&self, k: usize) -> &[f32] {
        let n = 3 * self.height() * self.width();
        &self.frames.data()[k * n..(k + 1) * n]
    }

    /// Last frame repeated `T` times.
    pub fn repeat_last(&self) -> Self {
        let t = self.t();
        let last = self.frame(t - 1).to_vec();
        let data: Vec<f32> = (0..t).flat_map(|_| last.iter().copied()).collect();
        Self {
            frames: Tensor::new(self.frames.shape(), data).expect("same shape"),
            label: self.label.clone(),
        }
    }
}

/// Geometry of one sample, drawn from `(seed, index)` only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub moving_left: bool,
    pub shape_w: usize,
    pub shape_h: usize,
    pub top: usize,
    /// Hidden columns of the shape at the final frame.
    pub hidden: usize,
    pub head: usize,
    pub speed: usize,
    pub occluder_x: usize,
    pub occluder_w: usize,
}

fn quantize(v: f32) -> f32 {
    libm::roundf(v.clamp(0.0, 1.0) * 255.0) / 255.0
}

pub fn geometry(cfg: &SynthConfig, index: u64) -> Result<Geometry> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2 * index));
    let moving_left = rng.gen_bool(0.5);
    let shape_w = rng.gen_range(cfg.shape_width.0..=cfg.shape_width.1);
    let shape_h = rng.gen_range(cfg.shape_height.0..=cfg.shape_height.1);
    let top = rng.gen_range(cfg.void_border..=cfg.height - cfg.void_border - shape_h);
    let occ = if cfg.occlusion_max > cfg.occlusion_min {
        rng.gen_range(cfg.occlusion_min..cfg.occlusion_max)
    } else {
        cfg.occlusion_min
    };
    let hidden = (libm::round(occ * shape_w as f64) as usize).min(shape_w - 1);
    let head = (libm::round(cfg.head_fraction * shape_w as f64) as usize).max(1);
    let occluder_w = rng.gen_range(cfg.occluder_width.0..=cfg.occluder_width.1);
    let span = (cfg.t - 1) * cfg.frame_stride;
    // the head's front must be out of the occluder in the first frame
    let needed = if span == 0 { 0 } else { hidden.div_ceil(span) };
    let drawn = rng.gen_range(cfg.speed_min..=cfg.speed_max);
    let x_draw: f64 = rng.gen();
    let mut speed = drawn.max(needed);
    // leftmost occluder start keeping the first-frame shape inside the image
    let min_x = |speed: usize| (shape_w + span * speed).saturating_sub(hidden);
    if min_x(speed) + occluder_w > cfg.width {
        speed = needed;
    }
    if min_x(speed) + occluder_w > cfg.width {
        return Err(Error::Config(format!(
            "synth: sample {index} geometry infeasible (shape {shape_w}px, speed {speed}, occluder {occluder_w}, width {})",
            cfg.width
        )));
    }
    let lo = min_x(speed);
    let hi = cfg.width - occluder_w;
    let occluder_x = lo + ((hi - lo + 1) as f64 * x_draw) as usize;
    Ok(Geometry { moving_left, shape_w, shape_h, top, hidden, head, speed, occluder_x: occluder_x.min(hi), occluder_w })
}

/// Sample `index` with its class drawn from `(seed, index)`.
pub fn generate(cfg: &SynthConfig, index: u64) -> Result<SequenceSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2 * index + 1));
    let class = if rng.gen_bool(0.5) { CLASS_A } else { CLASS_B };
    generate_with_class(cfg, index, class)
}

/// Sample `index` with a forced shape class; geometry, background and noise
/// are shared between the A and B versions.
pub fn generate_with_class(cfg: &SynthConfig, index: u64, class: u8) -> Result<SequenceSample> {
    if class != CLASS_A && class != CLASS_B {
        return Err(Error::Config(format!("synth: shape class must be {CLASS_A} or {CLASS_B}, got {class}")));
    }
    let g = geometry(cfg, index)?;
    let (h, w, t) = (cfg.height, cfg.width, cfg.t);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed ^ 0x5EED_BA5E, index));
    let base = [rng.gen_range(0.15..0.3f32), rng.gen_range(0.3..0.45f32), rng.gen_range(0.15..0.3f32)];
    let mut background = vec![0f32; 3 * h * w];
    for (ch, plane) in background.chunks_exact_mut(h * w).enumerate() {
        for v in plane {
            *v = base[ch] + rng.gen_range(-0.06..0.06f32);
        }
    }
    let head_rgb = if class == CLASS_A { HEAD_A_RGB } else { HEAD_B_RGB };
    // rightward motion is rendered; leftward samples are mirrored at the end
    let front_last = (g.occluder_x + g.hidden) as isize;
    let mut frames = vec![0f32; t * 3 * h * w];
    for k in 0..t {
        let offset = ((t - 1 - k) * cfg.frame_stride * g.speed) as isize;
        let front = front_last - offset;
        let back = front - g.shape_w as isize;
        let frame = &mut frames[k * 3 * h * w..(k + 1) * 3 * h * w];
        frame.copy_from_slice(&background);
        for y in 0..h {
            for x in 0..w {
                let xi = x as isize;
                let in_occluder = x >= g.occluder_x && x < g.occluder_x + g.occluder_w;
                let in_shape = y >= g.top && y < g.top + g.shape_h && xi >= back && xi < front;
                let rgb = if in_occluder {
                    let stripe = if (x - g.occluder_x) % 6 < 3 { 0.05 } else { -0.05 };
                    Some(OCCLUDER_RGB.map(|c| c + stripe))
                } else if in_shape {
                    Some(if xi >= front - g.head as isize { head_rgb } else { BODY_RGB })
                } else {
                    None
                };
                if let Some(rgb) = rgb {
                    for ch in 0..3 {
                        frame[ch * h * w + y * w + x] = rgb[ch];
                    }
                }
            }
        }
        for v in frame.iter_mut() {
            *v = quantize(*v + rng.gen_range(-0.02..0.02f32));
        }
    }
    let mut label = vec![CLASS_BACKGROUND; h * w];
    let front = front_last;
    let back = front - g.shape_w as isize;
    for y in 0..h {
        for x in 0..w {
            let xi = x as isize;
            let l = &mut label[y * w + x];
            if x >= g.occluder_x && x < g.occluder_x + g.occluder_w {
                *l = CLASS_OCCLUDER;
            } else if y >= g.top && y < g.top + g.shape_h && xi >= back && xi < front {
                *l = class;
            }
            let b = cfg.void_border;
            if y < b || y >= h - b || x < b || x >= w - b {
                *l = VOID_LABEL;
            }
        }
    }
    let mut sample = SequenceSample::new(Tensor::new(&[t, 3, h, w], frames)?, label)?;
    if g.moving_left {
        hflip(&mut sample);
    }
    Ok(sample)
}

/// Samples `[start, start + n)`.
pub fn generate_range(cfg: &SynthConfig, start: u64, n: usize) -> Result<Vec<SequenceSample>> {
    (start..start + n as u64).map(|i| generate(cfg, i)).collect()
}

/// Mirrors every frame and the label horizontally.
pub fn hflip(sample: &mut SequenceSample) {
    let w = sample.width();
    sample.frames.data_mut().chunks_exact_mut(w).for_each(|row| row.reverse());
    sample.label.chunks_exact_mut(w).for_each(|row| row.reverse());
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub hflip_p: f64,
    /// Brightness factor drawn from `1 ± brightness`.
    pub brightness: f64,
    /// Contrast factor around 0.5 drawn from `1 ± contrast`.
    pub contrast: f64,
    pub blur: bool,
    pub blur_sigma_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { hflip_p: 0.5, brightness: 0.2, contrast: 0.2, blur: false, blur_sigma_max: 1.0 }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self { hflip_p: 0.0, brightness: 0.0, contrast: 0.0, blur: false, blur_sigma_max: 0.0 }
    }
}

/// Draws one transform from `seed` and applies it to every frame alike.
/// Flips also flip the label; photometric changes leave it alone.
pub fn augment_sequence(sample: &SequenceSample, cfg: &AugmentConfig, seed: u64) -> SequenceSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = cfg.hflip_p > 0.0 && rng.gen_bool(cfg.hflip_p.min(1.0));
    let b = if cfg.brightness > 0.0 { rng.gen_range(-cfg.brightness..=cfg.brightness) } else { 0.0 };
    let c = if cfg.contrast > 0.0 { rng.gen_range(-cfg.contrast..=cfg.contrast) } else { 0.0 };
    let sigma = if cfg.blur && cfg.blur_sigma_max > 0.0 { rng.gen_range(0.0..=cfg.blur_sigma_max) } else { 0.0 };
    let mut out = sample.clone();
    if flip {
        hflip(&mut out);
    }
    if b != 0.0 || c != 0.0 {
        let (bf, cf) = ((1.0 + b) as f32, (1.0 + c) as f32);
        for v in out.frames.data_mut() {
            *v = (((*v * bf) - 0.5) * cf + 0.5).clamp(0.0, 1.0);
        }
    }
    if sigma > 1e-3 {
        let (h, w) = (out.height(), out.width());
        for plane in out.frames.data_mut().chunks_exact_mut(h * w) {
            gaussian_blur(plane, h, w, sigma);
        }
    }
    out
}

/// Separable Gaussian blur with clamped edges.
pub fn gaussian_blur(plane: &mut [f32], h: usize, w: usize, sigma: f64) {
    let radius = libm::ceil(3.0 * sigma) as isize;
    let mut kernel: Vec<f32> = (-radius..=radius).map(|i| libm::exp(-(i * i) as f64 / (2.0 * sigma * sigma)) as f32).collect();
    let sum: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);
    let mut tmp = vec![0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let xx = (x as isize + k as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += kv * plane[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let yy = (y as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            plane[y * w + x] = acc.clamp(0.0, 1.0);
        }
    }
}
