#![allow(dead_code)]

use stseg::config::RunConfig;

/// Small benchmark and model that train in well under a second.
pub const TINY: [&str; 9] = [
    "synth.height=16",
    "synth.width=48",
    "synth.speed_min=1",
    "synth.speed_max=2",
    "synth.shape_width=8,10",
    "synth.shape_height=5,7",
    "synth.occluder_width=10,12",
    "model.depth=2",
    "model.channels=4,8",
];

pub fn tiny_config(extra: &[&str]) -> RunConfig {
    let overrides: Vec<String> = TINY.iter().chain(extra).map(|s| s.to_string()).collect();
    let cfg = RunConfig::resolve(None, &overrides).unwrap();
    cfg.validate().unwrap();
    cfg
}

pub fn set_args(extra: &[&str]) -> Vec<String> {
    TINY.iter().chain(extra).flat_map(|kv| ["--set".to_string(), kv.to_string()]).collect()
}
