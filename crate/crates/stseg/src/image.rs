//! Binary portable pixmaps (P6) and graymaps (P5), maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};

/// An 8-bit image, channel-interleaved (`channels` is 1 or 3).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height);
        Self { width, height, channels: 1, data }
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), 3 * width * height);
        Self { width, height, channels: 3, data }
    }

    /// Packs planar `[3, H, W]` values in `[0, 1]` into an RGB image.
    pub fn from_planar(planes: &[f32], height: usize, width: usize) -> Self {
        let hw = height * width;
        assert_eq!(planes.len(), 3 * hw);
        let data = (0..hw).flat_map(|p| (0..3).map(move |c| to_u8(planes[c * hw + p]))).collect();
        Self::rgb(width, height, data)
    }

    /// Planar `[3, H, W]` values `v/255`.
    pub fn to_planar(&self) -> Vec<f32> {
        let hw = self.width * self.height;
        let mut out = vec![0f32; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                out[c * hw + p] = self.data[p * 3 + c] as f32 / 255.0;
            }
        }
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let channels = match bytes.get(..2) {
            Some(b"P5") => 1,
            Some(b"P6") => 3,
            _ => return Err("bad magic (expected P5 or P6)".into()),
        };
        let mut pos = 2;
        let mut fields = [0usize; 3];
        for field in &mut fields {
            // whitespace and comments between header fields
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
            *field = text.parse().map_err(|_| format!("malformed header near byte {start}"))?;
        }
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err("header must end with one whitespace byte".into());
        }
        pos += 1;
        let [width, height, maxval] = fields;
        if maxval != 255 {
            return Err(format!("maxval {maxval} unsupported (need 255)"));
        }
        if width == 0 || height == 0 {
            return Err(format!("empty image {width}x{height}"));
        }
        let n = width * height * channels;
        let payload = &bytes[pos..];
        if payload.len() < n {
            return Err(format!("truncated payload: {} of {n} bytes", payload.len()));
        }
        if payload.len() > n {
            return Err(format!("{} trailing bytes", payload.len() - n));
        }
        Ok(Self { width, height, channels, data: payload.to_vec() })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.encode()).at(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path.as_ref()).at(path.as_ref())?;
        Self::decode(&bytes).map_err(|m| Error::format(path, m))
    }
}

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Preview colours per class; void is black.
pub const PALETTE: [[u8; 3]; 4] = [[40, 40, 40], [150, 150, 160], [220, 40, 40], [40, 70, 220]];

/// Blends a label map over the frame: half image, half class colour.
pub fn overlay(frame: &Image, labels: &[u8]) -> Image {
    assert_eq!(frame.channels, 3);
    assert_eq!(labels.len(), frame.width * frame.height);
    let mut data = frame.data.clone();
    for (p, &l) in labels.iter().enumerate() {
        let colour = PALETTE.get(l as usize).copied().unwrap_or([0, 0, 0]);
        for c in 0..3 {
            let v = &mut data[p * 3 + c];
            *v = ((*v as u16 + colour[c] as u16) / 2) as u8;
        }
    }
    Image { data, ..frame.clone() }
}
