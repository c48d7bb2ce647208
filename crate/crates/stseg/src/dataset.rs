//! On-disk sequence datasets: `root/<split>/sampleNNNN/` holding
//! `frame_0.ppm … frame_{T-1}.ppm`, `label.pgm` and `meta.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use stseg_core::synth::SequenceSample;
use stseg_core::Tensor;

use crate::config::parse_kv;
use crate::error::{Error, IoContext, Result};
use crate::image::Image;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Per-sample metadata stored in `meta.txt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleMeta {
    pub t: usize,
    pub stride: usize,
    pub classes: usize,
}

impl SampleMeta {
    fn to_text(self) -> String {
        format!("T={}\nstride={}\nclasses={}\n", self.t, self.stride, self.classes)
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let kv = parse_kv(text).map_err(|m| Error::format(path, m))?;
        let get = |key: &str| -> Result<usize> {
            let v = kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
            let v = v.ok_or_else(|| Error::format(path, format!("missing key {key}")))?;
            v.parse().map_err(|_| Error::format(path, format!("{key}={v} is not an integer")))
        };
        Ok(Self { t: get("T")?, stride: get("stride")?, classes: get("classes")? })
    }
}

pub fn sample_dir(root: &Path, split: &str, index: usize) -> PathBuf {
    root.join(split).join(format!("sample{index:04}"))
}

pub fn write_sample(dir: &Path, sample: &SequenceSample, meta: SampleMeta) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let (h, w) = (sample.height(), sample.width());
    for k in 0..sample.t() {
        Image::from_planar(sample.frame(k), h, w).save(dir.join(format!("frame_{k}.ppm")))?;
    }
    Image::gray(w, h, sample.label.clone()).save(dir.join("label.pgm"))?;
    let meta_path = dir.join("meta.txt");
    fs::write(&meta_path, meta.to_text()).at(&meta_path)
}

/// Reads one sample directory; `t` is the frame count the caller expects.
pub fn read_sample(dir: &Path, t: usize) -> Result<(SequenceSample, SampleMeta)> {
    let meta_path = dir.join("meta.txt");
    let meta = SampleMeta::parse(&fs::read_to_string(&meta_path).at(&meta_path)?, &meta_path)?;
    if meta.t != t {
        return Err(Error::format(&meta_path, format!("sample has T={}, configuration expects T={t}", meta.t)));
    }
    let label_path = dir.join("label.pgm");
    let label = Image::load(&label_path)?;
    if label.channels != 1 {
        return Err(Error::format(&label_path, "label must be a graymap"));
    }
    let (h, w) = (label.height, label.width);
    let mut frames = Vec::with_capacity(t * 3 * h * w);
    for k in 0..t {
        let path = dir.join(format!("frame_{k}.ppm"));
        let img = Image::load(&path)?;
        if img.channels != 3 || (img.height, img.width) != (h, w) {
            return Err(Error::format(&path, format!("frame is {}x{}x{}, label is {w}x{h}", img.width, img.height, img.channels)));
        }
        frames.extend(img.to_planar());
    }
    let extra = dir.join(format!("frame_{t}.ppm"));
    if extra.exists() {
        return Err(Error::format(&extra, format!("more than T={t} frames on disk")));
    }
    let sample = SequenceSample::new(Tensor::new(&[t, 3, h, w], frames)?, label.data)?;
    Ok((sample, meta))
}

/// Sample directories of a split in name order.
pub fn list_samples(root: &Path, split: &str) -> Result<Vec<PathBuf>> {
    let dir = root.join(split);
    let mut dirs = Vec::new();
    for entry in fs::read_dir(&dir).at(&dir)? {
        let entry = entry.at(&dir)?;
        if entry.file_type().at(entry.path())?.is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Loads a whole split in directory-name order.
pub fn load_split(root: &Path, split: &str, t: usize) -> Result<Vec<SequenceSample>> {
    list_samples(root, split)?.iter().map(|d| read_sample(d, t).map(|(s, _)| s)).collect()
}
