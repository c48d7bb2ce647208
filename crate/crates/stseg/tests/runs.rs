mod common;

use std::fs;
use std::path::Path;

use stseg::config::RunConfig;
use stseg::formats::Checkpoint;
use stseg::run::{self, checkpoint_name, TrainOutcome, FINAL_CHECKPOINT, LOG_FILE};

fn cfg(extra: &[&str]) -> RunConfig {
    let mut base = vec!["train.epochs=2", "synth.n_train=8", "train.checkpoint_every=4"];
    base.extend_from_slice(extra);
    common::tiny_config(&base)
}

fn train_into(cfg: &RunConfig, dir: &Path) -> (TrainOutcome, String) {
    let data = run::dataset(cfg, "train").unwrap();
    let mut echo = Vec::new();
    let outcome = run::train(cfg, &data, dir, &mut echo).unwrap();
    (outcome, String::from_utf8(echo).unwrap())
}

#[test]
fn log_lines_have_the_documented_shape() {
    let dir = tempfile::tempdir().unwrap();
    let (outcome, echo) = train_into(&cfg(&[]), dir.path());
    assert_eq!(outcome.logs.len(), 16);
    let lines: Vec<&str> = echo.lines().collect();
    assert_eq!(lines.len(), 16);
    for (i, line) in lines.iter().enumerate() {
        let keys: Vec<&str> = line.split(' ').map(|kv| kv.split_once('=').unwrap().0).collect();
        assert_eq!(keys, ["step", "loss", "gnorm", "clip"]);
        assert!(line.starts_with(&format!("step={} ", i + 1)));
    }
    assert_eq!(fs::read_to_string(dir.path().join(LOG_FILE)).unwrap(), echo);
    for step in [4, 8, 12, 16] {
        assert!(dir.path().join(checkpoint_name(step)).exists());
    }
    let echoed = fs::read_to_string(dir.path().join(run::CONFIG_FILE)).unwrap();
    assert_eq!(echoed, cfg(&[]).to_text());
}

#[test]
fn identical_configs_give_identical_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (_, la) = train_into(&cfg(&[]), a.path());
    let (_, lb) = train_into(&cfg(&[]), b.path());
    assert_eq!(la, lb);
    let read = |d: &Path| fs::read(d.join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn resumed_run_matches_the_uninterrupted_one() {
    let full = tempfile::tempdir().unwrap();
    let (reference, _) = train_into(&cfg(&[]), full.path());

    let ckpt = full.path().join(checkpoint_name(4));
    let resume = format!("train.resume={}", ckpt.display());
    let part = tempfile::tempdir().unwrap();
    let (resumed, _) = train_into(&cfg(&[&resume]), part.path());

    // steps 5..=14 are the ten steps after the checkpoint
    assert_eq!(resumed.logs.len(), 12);
    for (a, b) in reference.logs[4..14].iter().zip(&resumed.logs[..10]) {
        assert_eq!(a.step, b.step);
        assert_eq!(a.loss.to_bits(), b.loss.to_bits(), "step {}", a.step);
        assert_eq!(a.gnorm.to_bits(), b.gnorm.to_bits(), "step {}", a.step);
    }
    let read = |d: &Path| fs::read(d.join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(read(full.path()), read(part.path()));
}

#[test]
fn resume_across_an_epoch_boundary() {
    let full = tempfile::tempdir().unwrap();
    let (reference, _) = train_into(&cfg(&[]), full.path());
    let resume = format!("train.resume={}", full.path().join(checkpoint_name(8)).display());
    let part = tempfile::tempdir().unwrap();
    let (resumed, _) = train_into(&cfg(&[&resume]), part.path());
    assert_eq!(resumed.logs.first().unwrap().step, 9);
    assert_eq!(resumed.logs, reference.logs[8..].to_vec());
}

#[test]
fn clipping_bounds_every_logged_step() {
    let dir = tempfile::tempdir().unwrap();
    let (outcome, _) = train_into(&cfg(&["train.clip_norm=0.05"]), dir.path());
    assert!(outcome.logs.iter().any(|l| l.clip < 1.0));
    for l in &outcome.logs {
        assert!(l.clipped_norm <= 0.05 * (1.0 + 1e-6), "{l:?}");
    }
}

#[test]
fn saved_checkpoint_reloads_into_an_equal_model() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(&[]);
    let (outcome, _) = train_into(&c, dir.path());
    let model = run::load_model(&RunConfig::default(), &outcome.final_checkpoint).unwrap();
    assert_eq!(model.config(), outcome.trainer.model.config());
    let a = Checkpoint::from_model(&model, None).encode();
    let b = Checkpoint::from_model(&outcome.trainer.model, None).encode();
    assert_eq!(a, b);
    let val = run::dataset(&c, "val").unwrap();
    let ra = run::eval(&model, &val, false).unwrap();
    let rb = run::eval(&outcome.trainer.model, &val, false).unwrap();
    assert_eq!(ra.confusion, rb.confusion);
}

#[test]
fn prediction_writes_maps_and_previews() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(&["train.epochs=1"]);
    let (outcome, _) = train_into(&c, dir.path());
    let sample = run::dataset(&c, "test").unwrap().remove(0);
    let out = dir.path().join("pred");
    let maps = run::predict(&outcome.trainer.model, &sample.frames, 2, &out).unwrap();
    assert_eq!(maps.len(), 4);
    for (k, expected) in maps.iter().enumerate() {
        let map = stseg::image::Image::load(out.join(format!("pred_{k:04}.pgm"))).unwrap();
        assert_eq!(&map.data, expected);
        assert!(map.data.iter().all(|&l| l < 4));
        assert!(out.join(format!("preview_{k:04}.ppm")).exists());
    }
}

#[test]
fn eval_reports_are_parseable() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(&["train.epochs=1"]);
    let (outcome, _) = train_into(&c, dir.path());
    let report = run::eval(&outcome.trainer.model, &run::dataset(&c, "val").unwrap(), false).unwrap();
    let kv = run::eval_kv(&report);
    let pairs = stseg::config::parse_kv(&kv).unwrap();
    let miou: f64 = pairs.iter().find(|(k, _)| k == "miou").unwrap().1.parse().unwrap();
    assert_eq!(miou, report.miou);
    let table = run::eval_table(&report);
    for name in ["background", "occluder", "shape_a", "shape_b", "mIoU"] {
        assert!(table.contains(name), "{table}");
    }
}
