mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use stseg::config::parse_kv;
use stseg::error::{EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC};
use stseg::experiment::variants;
use stseg::formats::Checkpoint;
use stseg_core::model::SegModel;
use stseg_core::temporal::TemporalKind;

fn stseg(args: &[&str], extra: &[String]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stseg")).args(args).args(extra).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_key_exits_with_config_code() {
    let o = stseg(&["params", "--set", "model.nope=1"], &[]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.nope"));
    assert_eq!(code(&stseg(&["frobnicate"], &[])), EXIT_CONFIG);
}

#[test]
fn missing_or_corrupt_checkpoint_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = format!("eval.checkpoint={}", p(&dir.path().join("none.stck")));
    let o = stseg(&["eval", "--out", p(&out)], &common::set_args(&[&missing]));
    assert_eq!(code(&o), EXIT_IO);

    let bad = dir.path().join("bad.stck");
    fs::write(&bad, b"STCK1\x05\x00").unwrap();
    let corrupt = format!("eval.checkpoint={}", p(&bad));
    let o = stseg(&["eval", "--force", "--out", p(&out)], &common::set_args(&[&corrupt]));
    assert_eq!(code(&o), EXIT_IO);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.stck"));
}

#[test]
fn diverging_training_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = stseg(&["train", "--out", p(&out)], &common::set_args(&["train.lr=1e30", "train.epochs=3", "synth.n_train=4"]));
    assert_eq!(code(&o), EXIT_NUMERIC, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn non_empty_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("keep.txt"), "x").unwrap();
    let args = ["synth", "--out", p(dir.path()), "--n-train", "1", "--n-val", "1", "--n-test", "1"];
    assert_eq!(code(&stseg(&args, &common::set_args(&[]))), EXIT_CONFIG);
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&stseg(&forced, &common::set_args(&[]))), 0);
    assert!(dir.path().join("val/sample0000/label.pgm").exists());
}

#[test]
fn synth_train_eval_predict_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = stseg(&["synth", "--out", p(&data), "--n-train", "6", "--n-val", "3", "--n-test", "2"], &common::set_args(&[]));
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_dir(data.join("train")).unwrap().count(), 6);

    let root = format!("data.root={}", p(&data));
    let run = dir.path().join("run");
    let o = stseg(&["train", "--out", p(&run), "--seed", "3"], &common::set_args(&[&root, "train.epochs=1"]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("step=1 loss="));
    let echoed = parse_kv(&fs::read_to_string(run.join("config.txt")).unwrap()).unwrap();
    assert!(echoed.contains(&("seed".into(), "3".into())));
    assert!(echoed.contains(&("train.epochs".into(), "1".into())));

    let ckpt = format!("eval.checkpoint={}", p(&run.join("final.stck")));
    let ev = dir.path().join("eval");
    let o = stseg(&["eval", "--out", p(&ev)], &common::set_args(&[&root, &ckpt, "eval.split=test"]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("mIoU"));
    assert!(fs::read_to_string(ev.join("eval.txt")).unwrap().contains("miou="));

    let frames = format!("predict.frames={}", p(&data.join("test/sample0001")));
    let pr = dir.path().join("pred");
    let o = stseg(&["predict", "--out", p(&pr)], &common::set_args(&[&ckpt, &frames]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(pr.join("pred_0003.pgm").exists());
    assert!(!pr.join("pred_0004.pgm").exists());
}

#[test]
fn untrained_model_scores_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = stseg::config::RunConfig::default();
    let model = SegModel::<f32>::build(&cfg.model, 0).unwrap();
    let ckpt = dir.path().join("random.stck");
    Checkpoint::from_model(&model, None).save(&ckpt).unwrap();
    let out = dir.path().join("eval");
    let set = format!("eval.checkpoint={}", p(&ckpt));
    let o = stseg(&["eval", "--out", p(&out), "--set", &set], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let kv = parse_kv(&fs::read_to_string(out.join("eval.txt")).unwrap()).unwrap();
    let miou: f64 = kv.iter().find(|(k, _)| k == "miou").unwrap().1.parse().unwrap();
    assert!(miou < 0.4, "random model mIoU {miou}");
}

#[test]
fn params_prints_nominal_formulas() {
    let o = stseg(&["params"], &[]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("4C^2K^2"), "{text}");
    assert!(text.contains("learnable parameters:"));
    let o = stseg(&["params", "--set", "model.temporal_kind=pointwise_tn"], &[]);
    assert!(stdout(&o).contains("T^2"));
}

#[test]
fn gradcheck_passes() {
    let o = stseg(&["gradcheck"], &[]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn experiment_table_shape_and_rerun() {
    assert_eq!(variants(TemporalKind::PointwiseTn).len(), 11);
    let dir = tempfile::tempdir().unwrap();
    let sets = common::set_args(&["synth.n_train=3", "synth.n_val=2", "experiment.epochs=1", "experiment.seeds=0,1"]);
    let run = |name: &str, parallel: &str| {
        let out = dir.path().join(name);
        let o = stseg(&["experiment", "--parallel", parallel, "--out", p(&out)], &sets);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        (fs::read_to_string(out.join("results.csv")).unwrap(), fs::read_to_string(out.join("results.md")).unwrap())
    };
    let (csv, md) = run("a", "1");
    let parsed = stseg::experiment::ExperimentResult::from_csv(&csv, TemporalKind::PointwiseTn).unwrap();
    assert_eq!(parsed.to_csv(), csv);
    assert_eq!(csv.lines().count(), 1 + 11 * 2);
    assert_eq!(md.lines().filter(|l| l.starts_with("| U-Net")).count(), 11);
    // sharding over workers must not change any cell
    assert_eq!(run("b", "3"), (csv, md));
}
