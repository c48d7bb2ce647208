mod common;

use std::fs;

use stseg::dataset::{list_samples, load_split, read_sample, sample_dir, write_sample, SampleMeta};
use stseg::error::Error;
use stseg::image::Image;
use stseg::run;

fn meta() -> SampleMeta {
    SampleMeta { t: 4, stride: 2, classes: 4 }
}

#[test]
fn written_samples_load_back_bit_exact() {
    let cfg = common::tiny_config(&[]);
    let samples = run::synth_split(&cfg, "val").unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (i, s) in samples.iter().enumerate() {
        write_sample(&sample_dir(dir.path(), "val", i), s, meta()).unwrap();
    }
    let back = load_split(dir.path(), "val", 4).unwrap();
    assert_eq!(back.len(), samples.len());
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a.frames.shape(), b.frames.shape());
        let bits = |s: &stseg_core::synth::SequenceSample| s.frames.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
        assert_eq!(a.label, b.label);
    }
    let (_, m) = read_sample(&sample_dir(dir.path(), "val", 0), 4).unwrap();
    assert_eq!(m, meta());
}

#[test]
fn samples_are_listed_in_name_order() {
    let cfg = common::tiny_config(&[]);
    let s = run::synth_split(&cfg, "val").unwrap();
    let dir = tempfile::tempdir().unwrap();
    for i in [12, 3, 7] {
        write_sample(&sample_dir(dir.path(), "train", i), &s[i % s.len()], meta()).unwrap();
    }
    let names: Vec<String> =
        list_samples(dir.path(), "train").unwrap().iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["sample0003", "sample0007", "sample0012"]);
}

fn one_sample() -> (tempfile::TempDir, std::path::PathBuf) {
    let cfg = common::tiny_config(&[]);
    let s = run::synth_split(&cfg, "test").unwrap().remove(0);
    let dir = tempfile::tempdir().unwrap();
    let path = sample_dir(dir.path(), "test", 0);
    write_sample(&path, &s, meta()).unwrap();
    (dir, path)
}

#[test]
fn frame_count_mismatch_is_a_format_error() {
    let (_dir, path) = one_sample();
    let err = read_sample(&path, 3).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");

    // three frames on disk while the metadata and config say four
    fs::remove_file(path.join("frame_3.ppm")).unwrap();
    let err = read_sample(&path, 4).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("frame_3.ppm"), "{err}");
}

#[test]
fn extra_frames_are_rejected() {
    let (_dir, path) = one_sample();
    fs::copy(path.join("frame_0.ppm"), path.join("frame_4.ppm")).unwrap();
    assert!(matches!(read_sample(&path, 4).unwrap_err(), Error::Format { .. }));
}

#[test]
fn missing_label_names_the_path() {
    let (_dir, path) = one_sample();
    fs::remove_file(path.join("label.pgm")).unwrap();
    let err = read_sample(&path, 4).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("label.pgm"), "{err}");
}

#[test]
fn dimension_mismatch_is_a_format_error() {
    let (_dir, path) = one_sample();
    Image::rgb(3, 2, vec![0; 18]).save(path.join("frame_1.ppm")).unwrap();
    let err = read_sample(&path, 4).unwrap_err();
    assert!(matches!(err, Error::Format { .. }));
    assert!(err.to_string().contains("frame_1.ppm"), "{err}");
}

#[test]
fn malformed_header_is_a_format_error() {
    let (_dir, path) = one_sample();
    fs::write(path.join("frame_2.ppm"), b"P6\n16 16\n").unwrap();
    assert!(matches!(read_sample(&path, 4).unwrap_err(), Error::Format { .. }));
    fs::write(path.join("meta.txt"), "T=four\nstride=2\nclasses=4\n").unwrap();
    assert!(matches!(read_sample(&path, 4).unwrap_err(), Error::Format { .. }));
}

#[test]
fn splits_use_distinct_seeds() {
    let cfg = common::tiny_config(&[]);
    let seeds: Vec<u64> = ["train", "val", "test"].iter().map(|s| run::split_seed(cfg.seed, s)).collect();
    assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2] && seeds[0] != seeds[2]);
    let a = run::synth_split(&cfg, "train").unwrap();
    let b = run::synth_split(&cfg, "val").unwrap();
    assert_ne!(a[0], b[0]);
    assert_eq!(run::synth_split(&cfg, "train").unwrap(), a);
}
