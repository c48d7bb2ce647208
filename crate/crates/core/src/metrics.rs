//! Confusion-matrix based segmentation metrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::{Result, VOID_LABEL};

/// Pixel confusion matrix, rows ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    void: u64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes], void: 0 }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(shape_err!("{} counts for {classes} classes", counts.len()));
        }
        Ok(Self { classes, counts, void: 0 })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Pixels skipped because their label was void.
    pub fn void_pixels(&self) -> u64 {
        self.void
    }

    /// Adds one label map. Void ground-truth pixels are counted separately.
    pub fn add(&mut self, truth: &[u8], pred: &[u8]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(shape_err!("{} labels vs {} predictions", truth.len(), pred.len()));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            if t == VOID_LABEL {
                self.void += 1;
                continue;
            }
            let (t, p) = (t as usize, p as usize);
            if t >= self.classes || p >= self.classes {
                return Err(crate::Error::InvalidLabel { label: t.max(p) as u8, classes: self.classes });
            }
            self.counts[t * self.classes + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.void += other.void;
    }

    /// `TP / (TP + FP + FN)` per class; `None` when the denominator is 0.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                let fn_: u64 = (0..self.classes).map(|p| self.get(c, p)).sum::<u64>() - tp;
                let fp: u64 = (0..self.classes).map(|t| self.get(t, c)).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean IoU over classes present in ground truth or prediction.
    pub fn mean_iou(&self) -> f64 {
        let present: Vec<f64> = self.iou().into_iter().flatten().collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }

    pub fn pixel_accuracy(&self) -> f64 {
        let total: u64 = self.counts.iter().sum();
        let correct: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }
}

/// Evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub iou: Vec<Option<f64>>,
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub void_pixels: u64,
}

impl From<ConfusionMatrix> for EvalReport {
    fn from(confusion: ConfusionMatrix) -> Self {
        Self {
            iou: confusion.iou(),
            miou: confusion.mean_iou(),
            pixel_accuracy: confusion.pixel_accuracy(),
            void_pixels: confusion.void_pixels(),
            confusion,
        }
    }
}

/// Per-pixel argmax over the class axis of `[C, H, W]` logits.
pub fn argmax_labels<S: crate::Scalar>(logits: &[S], classes: usize) -> Vec<u8> {
    let plane = logits.len() / classes;
    (0..plane)
        .map(|p| {
            let mut best = 0;
            for c in 1..classes {
                if logits[c * plane + p] > logits[best * plane + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}
