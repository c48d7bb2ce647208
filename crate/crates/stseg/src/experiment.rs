//! Placement × temporal-unit ablation on the occlusion benchmark.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use stseg_core::model::{ModelConfig, Placement, SegModel};
use stseg_core::synth::SequenceSample;
use stseg_core::temporal::TemporalKind;
use stseg_core::train::{evaluate, TrainConfig, Trainer};

use crate::config::RunConfig;

/// One table row: a model variant, optionally fed frame T repeated.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub placement: Placement,
    pub kind: TemporalKind,
    pub repeat_last: bool,
}

impl Variant {
    pub fn label(&self) -> String {
        let unit = match self.kind {
            TemporalKind::PointwiseTn => "Pointwise TN",
            TemporalKind::Tn2dhw => "2DHW TN",
            TemporalKind::ConvLstm => "ConvLSTM",
        };
        match (self.placement, self.repeat_last) {
            (Placement::FrameByFrame, _) => "U-Net frame-by-frame".into(),
            (p, false) => format!("U-Net {unit} {p}"),
            (p, true) => format!("U-Net {unit} {p}, frame T repeated"),
        }
    }

    /// Short machine key, e.g. `encoder/pointwise_tn`.
    pub fn key(&self) -> String {
        match (self.placement, self.repeat_last) {
            (Placement::FrameByFrame, _) => "frame_by_frame".into(),
            (p, false) => format!("{p}/{}", self.kind),
            (p, true) => format!("{p}/{}/repeat_last", self.kind),
        }
    }
}

/// Frame-by-frame, the nine placement × unit rows grouped by unit, then the
/// repeated-frame control.
pub fn variants(control_kind: TemporalKind) -> Vec<Variant> {
    let mut rows = vec![Variant { placement: Placement::FrameByFrame, kind: TemporalKind::PointwiseTn, repeat_last: false }];
    for kind in TemporalKind::ALL {
        for placement in [Placement::Bottleneck, Placement::Skip, Placement::Encoder] {
            rows.push(Variant { placement, kind, repeat_last: false });
        }
    }
    rows.push(Variant { placement: Placement::Encoder, kind: control_kind, repeat_last: true });
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub row: usize,
    pub seed: u64,
    /// Validation mIoU, or the failure message.
    pub result: Result<f64, String>,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowSummary {
    pub variant: Variant,
    pub mean: f64,
    /// Sample standard deviation (0 for a single run).
    pub std: f64,
    pub runs: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub cells: Vec<Cell>,
}

fn model_for(base: &ModelConfig, v: &Variant) -> ModelConfig {
    ModelConfig { placement: v.placement, temporal_kind: v.kind, ..base.clone() }
}

fn train_config(cfg: &RunConfig, v: &Variant, seed: u64) -> TrainConfig {
    TrainConfig {
        lr: cfg.experiment.lr,
        epochs: cfg.experiment.epochs,
        repeat_last: v.repeat_last,
        checkpoint_every: 0,
        seed,
        ..cfg.train_config()
    }
}

/// Trains one variant with one seed and returns (val mIoU, mean loss of
/// the last epoch).
pub fn run_cell(
    cfg: &RunConfig,
    v: &Variant,
    seed: u64,
    train: &[SequenceSample],
    val: &[SequenceSample],
) -> stseg_core::Result<(f64, f64)> {
    let model = SegModel::<f32>::build(&model_for(&cfg.model, v), seed)?;
    let tc = train_config(cfg, v, seed);
    let epochs = tc.epochs as u64;
    let mut trainer = Trainer::new(model, tc)?;
    let mut last = 0.0;
    for epoch in 0..epochs {
        let logs = trainer.train_epoch(train, epoch, |_, _| Ok(true))?;
        last = logs.iter().map(|l| l.loss).sum::<f64>() / logs.len().max(1) as f64;
    }
    let report = evaluate(&trainer.model, val, v.repeat_last)?;
    Ok((report.miou, last))
}

/// Runs every (row, seed) cell on `workers` threads. Failures are recorded
/// per cell and the rest continue; `progress` sees each finished cell.
pub fn run(
    cfg: &RunConfig,
    train: &[SequenceSample],
    val: &[SequenceSample],
    workers: usize,
    progress: &(dyn Fn(&Variant, &Cell) + Sync),
) -> ExperimentResult {
    let variants = variants(cfg.experiment.control_kind);
    let seeds = cfg.experiment.seeds.clone();
    let jobs: Vec<(usize, u64)> = (0..variants.len()).flat_map(|r| seeds.iter().map(move |&s| (r, s))).collect();
    let next = AtomicUsize::new(0);
    let cells = Mutex::new(Vec::with_capacity(jobs.len()));
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(jobs.len()) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(row, seed)) = jobs.get(j) else { break };
                let v = &variants[row];
                let (result, final_loss) = match run_cell(cfg, v, seed, train, val) {
                    Ok((miou, loss)) => (Ok(miou), loss),
                    Err(e) => (Err(e.to_string()), f64::NAN),
                };
                let cell = Cell { row, seed, result, final_loss };
                progress(v, &cell);
                cells.lock().unwrap().push(cell);
            });
        }
    });
    let mut cells = cells.into_inner().unwrap();
    cells.sort_by_key(|c| (c.row, seeds.iter().position(|&s| s == c.seed)));
    ExperimentResult { variants, seeds, cells }
}

impl ExperimentResult {
    pub fn summaries(&self) -> Vec<RowSummary> {
        self.variants
            .iter()
            .enumerate()
            .map(|(r, v)| {
                let ok: Vec<f64> = self.cells.iter().filter(|c| c.row == r).filter_map(|c| c.result.clone().ok()).collect();
                let failures = self.cells.iter().filter(|c| c.row == r && c.result.is_err()).count();
                let n = ok.len();
                let mean = if n == 0 { f64::NAN } else { ok.iter().sum::<f64>() / n as f64 };
                let std = if n < 2 {
                    0.0
                } else {
                    (ok.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                };
                RowSummary { variant: v.clone(), mean, std, runs: n, failures }
            })
            .collect()
    }

    pub fn mean(&self, placement: Placement, kind: TemporalKind, repeat_last: bool) -> Option<f64> {
        self.summaries()
            .into_iter()
            .find(|s| {
                s.variant.placement == placement
                    && s.variant.repeat_last == repeat_last
                    && (placement == Placement::FrameByFrame || s.variant.kind == kind)
            })
            .map(|s| s.mean)
    }

    /// One line per cell: `row,key,seed,miou,final_loss,error`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,variant,seed,miou,final_loss,error\n");
        for c in &self.cells {
            let v = &self.variants[c.row];
            let (miou, err) = match &c.result {
                Ok(m) => (m.to_string(), String::new()),
                Err(e) => (String::new(), e.replace([',', '\n'], " ")),
            };
            s.push_str(&format!("{},{},{},{},{},{}\n", c.row, v.key(), c.seed, miou, c.final_loss, err));
        }
        s
    }

    /// Parses [`ExperimentResult::to_csv`] output. Rows are matched by key
    /// against [`variants`] for `control_kind`.
    pub fn from_csv(text: &str, control_kind: TemporalKind) -> Result<Self, String> {
        let variants = variants(control_kind);
        let mut lines = text.lines();
        if lines.next() != Some("row,variant,seed,miou,final_loss,error") {
            return Err("unexpected CSV header".into());
        }
        let mut seeds = Vec::new();
        let mut cells = Vec::new();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.splitn(6, ',').collect();
            let [_, key, seed, miou, loss, err] = f[..] else {
                return Err(format!("line {}: expected 6 fields", n + 2));
            };
            let row = variants.iter().position(|v| v.key() == key).ok_or_else(|| format!("unknown variant {key:?}"))?;
            let seed: u64 = seed.parse().map_err(|_| format!("line {}: bad seed", n + 2))?;
            let result = if miou.is_empty() {
                Err(err.to_string())
            } else {
                Ok(miou.parse::<f64>().map_err(|_| format!("line {}: bad mIoU", n + 2))?)
            };
            if !seeds.contains(&seed) {
                seeds.push(seed);
            }
            cells.push(Cell { row, seed, result, final_loss: loss.parse().unwrap_or(f64::NAN) });
        }
        Ok(Self { variants, seeds, cells })
    }

    /// Mean ± sample std per row, in table order.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Method | mIoU |\n|---|---|\n");
        for sum in self.summaries() {
            let cell = if sum.runs == 0 {
                "failed".to_string()
            } else {
                format!("{:.3} ± {:.4}", sum.mean, sum.std)
            };
            let note = if sum.failures > 0 { format!(" ({} failed)", sum.failures) } else { String::new() };
            s.push_str(&format!("| {} | {cell}{note} |\n", sum.variant.label()));
        }
        s.push_str(&format!("\n{} seeds: {:?}\n", self.seeds.len(), self.seeds));
        s
    }
}

/// Outcome of the ordering and control checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub ordering: Vec<(TemporalKind, bool, [f64; 4])>,
    pub gap: Vec<(TemporalKind, f64)>,
    pub control_distance: f64,
}

impl Verdict {
    pub fn ordering_ok(&self, kinds: &[TemporalKind], min_gap: f64) -> bool {
        kinds.iter().all(|k| {
            let ord = self.ordering.iter().any(|(kk, ok, _)| kk == k && *ok);
            let gap = self.gap.iter().any(|(kk, g)| kk == k && *g >= min_gap);
            ord && gap
        })
    }
}

/// encoder > skip > bottleneck > frame-by-frame per unit, the
/// encoder − frame-by-frame gap, and |control − frame-by-frame|.
pub fn verdict(r: &ExperimentResult, control_kind: TemporalKind) -> Verdict {
    let fbf = r.mean(Placement::FrameByFrame, TemporalKind::PointwiseTn, false).unwrap_or(f64::NAN);
    let mut ordering = Vec::new();
    let mut gap = Vec::new();
    for kind in TemporalKind::ALL {
        let m = |p| r.mean(p, kind, false).unwrap_or(f64::NAN);
        let (b, s, e) = (m(Placement::Bottleneck), m(Placement::Skip), m(Placement::Encoder));
        ordering.push((kind, e > s && s > b && b > fbf, [e, s, b, fbf]));
        gap.push((kind, e - fbf));
    }
    let control = r.mean(Placement::Encoder, control_kind, true).unwrap_or(f64::NAN);
    Verdict { ordering, gap, control_distance: (control - fbf).abs() }
}
