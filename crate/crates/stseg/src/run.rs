//! Command bodies: dataset synthesis, training runs with checkpoints,
//! evaluation, sliding-window prediction and parameter reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use stseg_core::metrics::EvalReport;
use stseg_core::model::{ParamReport, SegModel};
use stseg_core::synth::{generate, mix_seed, SequenceSample, SynthConfig};
use stseg_core::train::{evaluate, sliding_window_predict, StepLog, Trainer};
use stseg_core::Tensor;

use crate::config::{load_model_config, save_model_config, RunConfig};
use crate::dataset::{load_split, sample_dir, write_sample, SampleMeta, SPLITS};
use crate::error::{Error, IoContext, Result};
use crate::formats::Checkpoint;
use crate::image::{overlay, Image};

pub const CONFIG_FILE: &str = "config.txt";
pub const MODEL_FILE: &str = "model.txt";
pub const LOG_FILE: &str = "log.txt";
pub const FINAL_CHECKPOINT: &str = "final.stck";

/// Creates `dir`, refusing a non-empty one unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).at(dir)?.next().is_some();
        if non_empty && !force {
            return Err(Error::Config(format!("{} exists and is not empty (use --force)", dir.display())));
        }
    }
    fs::create_dir_all(dir).at(dir)
}

/// Writes the effective configuration into the run directory.
pub fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, cfg.to_text()).at(&path)
}

/// Generation seed of a split; the three splits never share a seed.
pub fn split_seed(seed: u64, split: &str) -> u64 {
    let k = SPLITS.iter().position(|&s| s == split).unwrap_or(SPLITS.len()) as u64;
    mix_seed(seed, 0x5_1175 + k)
}

pub fn split_config(cfg: &RunConfig, split: &str) -> SynthConfig {
    SynthConfig { seed: split_seed(cfg.seed, split), ..cfg.synth_config() }
}

pub fn split_size(cfg: &RunConfig, split: &str) -> usize {
    match split {
        "train" => cfg.n_train,
        "val" => cfg.n_val,
        _ => cfg.n_test,
    }
}

/// Generates one split in memory.
pub fn synth_split(cfg: &RunConfig, split: &str) -> Result<Vec<SequenceSample>> {
    let sc = split_config(cfg, split);
    (0..split_size(cfg, split) as u64).map(|i| generate(&sc, i).map_err(Error::from)).collect()
}

/// Writes train/val/test under `out`; returns the per-split counts.
pub fn synth(cfg: &RunConfig, out: &Path) -> Result<Vec<(String, usize)>> {
    let sc = cfg.synth_config();
    sc.validate()?;
    let meta = SampleMeta { t: sc.t, stride: sc.frame_stride, classes: sc.num_classes };
    let mut counts = Vec::new();
    for split in SPLITS {
        let n = split_size(cfg, split);
        let sc = split_config(cfg, split);
        for i in 0..n {
            write_sample(&sample_dir(out, split, i), &generate(&sc, i as u64)?, meta)?;
        }
        counts.push((split.to_string(), n));
    }
    Ok(counts)
}

/// Loads a split from `data.root`, or synthesises it in memory when no
/// dataset directory is configured.
pub fn dataset(cfg: &RunConfig, split: &str) -> Result<Vec<SequenceSample>> {
    match &cfg.data {
        Some(root) => load_split(root, split, cfg.model.t),
        None => synth_split(cfg, split),
    }
}

pub fn log_line(log: &StepLog) -> String {
    format!("step={} loss={} gnorm={} clip={}", log.step, log.loss, log.gnorm, log.clip)
}

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.stck")
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub logs: Vec<StepLog>,
    pub trainer: Trainer<f32>,
    pub final_checkpoint: PathBuf,
}

/// Builds the trainer, restoring model and optimizer state from
/// `train.resume` when set.
pub fn make_trainer(cfg: &RunConfig) -> Result<Trainer<f32>> {
    let model = SegModel::<f32>::build(&cfg.model, cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.train_config())?;
    if let Some(path) = &cfg.resume {
        let ckpt = Checkpoint::load(path)?;
        let Trainer { model, adam, .. } = &mut trainer;
        ckpt.restore(model, Some(adam)).map_err(|m| Error::format(path, m))?;
    }
    Ok(trainer)
}

/// Trains for `train.epochs`, appending one line per step to `log.txt` and
/// `echo`, checkpointing every `train.checkpoint_every` steps and at the
/// end. A resumed run continues from the stored step count.
pub fn train(cfg: &RunConfig, data: &[SequenceSample], out: &Path, echo: &mut dyn Write) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    fs::create_dir_all(out).at(out)?;
    echo_config(out, cfg)?;
    save_model_config(&out.join(MODEL_FILE), &cfg.model)?;
    let mut trainer = make_trainer(cfg)?;
    let log_path = out.join(LOG_FILE);
    let mut log_file = fs::OpenOptions::new().create(true).append(true).open(&log_path).at(&log_path)?;
    let spe = trainer.steps_per_epoch(data.len()) as u64;
    let start = trainer.steps_done();
    let every = cfg.train.checkpoint_every as u64;
    let mut logs = Vec::new();
    let mut io_err: Option<Error> = None;
    for epoch in start / spe..cfg.train.epochs as u64 {
        let skip = if epoch == start / spe { (start % spe) as usize } else { 0 };
        let res = trainer.train_epoch_from(data, epoch, skip, |tr, log| {
            let line = log_line(log);
            let written = writeln!(log_file, "{line}").at(&log_path).and_then(|_| writeln!(echo, "{line}").at("<stdout>"));
            let saved = if every > 0 && log.step % every == 0 {
                let path = out.join(checkpoint_name(log.step));
                Checkpoint::from_model(&tr.model, Some(&tr.adam)).save(&path)
            } else {
                Ok(())
            };
            match written.and(saved) {
                Ok(()) => Ok(true),
                Err(e) => {
                    io_err = Some(e);
                    Ok(false)
                }
            }
        });
        if let Some(e) = io_err.take() {
            return Err(e);
        }
        logs.extend(res?);
    }
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    Checkpoint::from_model(&trainer.model, Some(&trainer.adam)).save(&final_checkpoint)?;
    Ok(TrainOutcome { logs, trainer, final_checkpoint })
}

/// Model described by the `model.txt` next to `checkpoint` (or the run
/// config when there is none), with the stored weights.
pub fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<SegModel<f32>> {
    let sibling = checkpoint.parent().map(|p| p.join(MODEL_FILE));
    let mc = match sibling {
        Some(p) if p.exists() => load_model_config(&p)?,
        _ => cfg.model.clone(),
    };
    let mut model = SegModel::<f32>::build(&mc, 0)?;
    Checkpoint::load(checkpoint)?.restore(&mut model, None).map_err(|m| Error::format(checkpoint, m))?;
    Ok(model)
}

pub fn required_checkpoint(cfg: &RunConfig) -> Result<&Path> {
    let path = cfg.checkpoint.as_deref().ok_or_else(|| Error::Config("eval.checkpoint is not set".into()))?;
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found")));
    }
    Ok(path)
}

pub fn eval(model: &SegModel<f32>, data: &[SequenceSample], repeat_last: bool) -> Result<EvalReport> {
    Ok(evaluate(model, data, repeat_last)?)
}

pub fn class_name(c: usize, classes: usize) -> String {
    match (classes, c) {
        (4, 0) => "background".into(),
        (4, 1) => "occluder".into(),
        (4, 2) => "shape_a".into(),
        (4, 3) => "shape_b".into(),
        _ => format!("class{c}"),
    }
}

/// Human-readable report.
pub fn eval_table(r: &EvalReport) -> String {
    let k = r.confusion.classes();
    let mut s = String::new();
    s.push_str(&format!("{:<12} {:>8}\n", "class", "IoU"));
    for (c, iou) in r.iou.iter().enumerate() {
        let v = iou.map_or("-".to_string(), |v| format!("{v:.4}"));
        s.push_str(&format!("{:<12} {:>8}\n", class_name(c, k), v));
    }
    s.push_str(&format!("{:<12} {:>8.4}\n", "mIoU", r.miou));
    s.push_str(&format!("{:<12} {:>8.4}\n", "pixel acc", r.pixel_accuracy));
    s.push_str(&format!("{:<12} {:>8}\n", "void px", r.void_pixels));
    s.push_str("confusion (rows: ground truth, columns: prediction)\n");
    for t in 0..k {
        let row: Vec<String> = (0..k).map(|p| format!("{:>9}", r.confusion.get(t, p))).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Machine-readable report.
pub fn eval_kv(r: &EvalReport) -> String {
    let k = r.confusion.classes();
    let mut s = format!("miou={}\npixel_accuracy={}\nvoid_pixels={}\nclasses={k}\n", r.miou, r.pixel_accuracy, r.void_pixels);
    for (c, iou) in r.iou.iter().enumerate() {
        s.push_str(&format!("iou.{c}={}\n", iou.map_or("none".to_string(), |v| v.to_string())));
    }
    let counts: Vec<String> = r.confusion.counts().iter().map(|c| c.to_string()).collect();
    s.push_str(&format!("confusion={}\n", counts.join(",")));
    s
}

/// Frames of a video directory (`*.ppm`, name order) as `[L, 3, H, W]`.
pub fn load_video(dir: &Path) -> Result<Tensor<f32>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .map(|e| e.map(|e| e.path()).at(dir))
        .collect::<Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "ppm"));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no .ppm frames")));
    }
    let mut data = Vec::new();
    let mut dims = None;
    for p in &paths {
        let img = Image::load(p)?;
        if img.channels != 3 {
            return Err(Error::format(p, "frames must be P6 pixmaps"));
        }
        if *dims.get_or_insert((img.height, img.width)) != (img.height, img.width) {
            return Err(Error::format(p, "frame size differs from the first frame"));
        }
        data.extend(img.to_planar());
    }
    let (h, w) = dims.unwrap();
    Ok(Tensor::new(&[paths.len(), 3, h, w], data)?)
}

/// Writes `pred_NNNN.pgm` label maps and `preview_NNNN.ppm` overlays.
pub fn predict(model: &SegModel<f32>, video: &Tensor<f32>, stride: usize, out: &Path) -> Result<Vec<Vec<u8>>> {
    let maps = sliding_window_predict(model, video, stride)?;
    let s = video.shape();
    let (h, w) = (s[2], s[3]);
    let n = 3 * h * w;
    fs::create_dir_all(out).at(out)?;
    for (k, map) in maps.iter().enumerate() {
        Image::gray(w, h, map.clone()).save(out.join(format!("pred_{k:04}.pgm")))?;
        let frame = Image::from_planar(&video.data()[k * n..(k + 1) * n], h, w);
        overlay(&frame, map).save(out.join(format!("preview_{k:04}.ppm")))?;
    }
    Ok(maps)
}

/// Parameter table with implemented and nominal temporal counts.
pub fn params_table(r: &ParamReport) -> String {
    let mut s = format!(
        "{:<12} {:>10} {:>10} {:>12} {:>10} {:>20}\n",
        "component", "spatial", "temporal", "t.weights", "per layer", "nominal"
    );
    for row in &r.rows {
        let (w, per, nom) = match &row.nominal {
            Some(n) => (
                n.weights.to_string(),
                n.per_layer_weights.map_or("-".into(), |v| v.to_string()),
                format!("{}={}", n.nominal_formula, n.nominal),
            ),
            None => ("-".into(), "-".into(), "-".into()),
        };
        s.push_str(&format!(
            "{:<12} {:>10} {:>10} {:>12} {:>10} {:>20}\n",
            row.component, row.spatial, row.temporal, w, per, nom
        ));
    }
    s.push_str(&format!("{:<12} {:>10} {:>10}\n", "total", r.spatial_total, r.temporal_total));
    s.push_str(&format!("learnable parameters: {}\n", r.total));
    s
}
