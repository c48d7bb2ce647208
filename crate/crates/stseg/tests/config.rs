use std::fs;

use stseg::config::{load_model_config, model_from_text, model_to_text, save_model_config, RunConfig};
use stseg::error::{Error, EXIT_CONFIG};
use stseg_core::model::Placement;
use stseg_core::temporal::TemporalKind;

#[test]
fn text_form_round_trips() {
    let mut cfg = RunConfig::default();
    cfg.set("model.channels", "4,6,6,8").unwrap();
    cfg.set("train.lr", "0.00025").unwrap();
    cfg.set("data.root", "/tmp/somewhere").unwrap();
    cfg.set("experiment.seeds", "5,6").unwrap();
    let mut back = RunConfig::default();
    back.apply_text(&cfg.to_text()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.to_text(), cfg.to_text());
}

#[test]
fn unknown_keys_and_bad_values_are_config_errors() {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("train.learning_rate", "1"),
        ("model.colour", "red"),
        ("train.lr", "fast"),
        ("model.placement", "decoder"),
        ("augment.blur", "maybe"),
        ("synth.shape_width", "3"),
    ] {
        let err = cfg.set(k, v).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG, "{k}={v}: {err}");
    }
    assert_eq!(cfg, RunConfig::default());
}

#[test]
fn command_line_wins_over_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.txt");
    fs::write(&path, "# comment\nseed = 4\ntrain.epochs=3\nmodel.placement=skip\n\n").unwrap();
    let cfg = RunConfig::resolve(Some(&path), &["train.epochs=9".into()]).unwrap();
    assert_eq!(cfg.seed, 4);
    assert_eq!(cfg.train.epochs, 9);
    assert_eq!(cfg.model.placement, Placement::Skip);
}

#[test]
fn file_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.txt");
    fs::write(&path, "seed=1\nno equals sign\n").unwrap();
    let err = RunConfig::resolve(Some(&path), &[]).unwrap_err();
    assert!(err.to_string().contains("bad.txt"), "{err}");
    assert!(matches!(RunConfig::resolve(None, &["seed".into()]).unwrap_err(), Error::Config(_)));
    let missing = RunConfig::resolve(Some(&dir.path().join("none.txt")), &[]).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }));
}

#[test]
fn validation_catches_inconsistent_settings() {
    let bad = |kv: &[&str]| {
        let o: Vec<String> = kv.iter().map(|s| s.to_string()).collect();
        RunConfig::resolve(None, &o).unwrap().validate().is_err()
    };
    assert!(!bad(&[]));
    assert!(bad(&["model.channels=4,8"]));
    assert!(bad(&["train.clip_norm=0"]));
    assert!(bad(&["synth.occlusion_max=1.0"]));
    assert!(bad(&["predict.stride=0"]));
    assert!(bad(&["experiment.epochs=0"]));
    // a stored dataset may have other class counts; only generation needs four
    assert!(bad(&["model.num_classes=19"]));
    assert!(!bad(&["model.num_classes=19", "data.root=/data/other"]));
}

#[test]
fn model_file_round_trips() {
    let mut cfg = RunConfig::default();
    cfg.set("model.temporal_kind", "tn_2dhw").unwrap();
    cfg.set("model.temporal_dilation", "2").unwrap();
    let text = model_to_text(&cfg.model);
    assert!(text.contains("temporal_kind=tn_2dhw\n"), "{text}");
    assert_eq!(model_from_text(&text).unwrap(), cfg.model);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.txt");
    save_model_config(&path, &cfg.model).unwrap();
    assert_eq!(load_model_config(&path).unwrap().temporal_kind, TemporalKind::Tn2dhw);
    assert!(model_from_text("depth=2\nwidth=3\n").is_err());
}
