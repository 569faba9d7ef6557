//! Segmentation metrics: per-class IoU / mIoU from a mergeable confusion
//! matrix and expected calibration error from mergeable bin statistics.

use serde::{Deserialize, Serialize};

use crate::domains::DomainSpec;
use crate::error::{DataError, Result};
use crate::image::Mask;

pub const DEFAULT_ECE_BINS: usize = 15;

/// Confusion counts, true-class major: counts[truth * n + pred].
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn record(&mut self, pred: &Mask, truth: &Mask, ignore_index: u32) {
        assert_eq!(pred.data.len(), truth.data.len(), "mask size mismatch");
        for (&p, &t) in pred.data.iter().zip(&truth.data) {
            if t == ignore_index {
                continue;
            }
            debug_assert!((t as usize) < self.n_classes && (p as usize) < self.n_classes);
            self.counts[t as usize * self.n_classes + p as usize] += 1;
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.n_classes, other.n_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Per-class IoU; classes with zero union report None and are excluded
    /// from the mean.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        let n = self.n_classes;
        (0..n)
            .map(|c| {
                let tp = self.counts[c * n + c];
                let row: u64 = (0..n).map(|p| self.counts[c * n + p]).sum();
                let col: u64 = (0..n).map(|t| self.counts[t * n + c]).sum();
                let union = row + col - tp;
                if union == 0 {
                    None
                } else {
                    Some(tp as f64 / union as f64)
                }
            })
            .collect()
    }

    pub fn miou(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(DataError::AllIgnored);
        }
        let ious: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if ious.is_empty() {
            return Err(DataError::Metrics("no class has nonzero union".into()));
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }
}

/// mIoU and per-class IoU of a single prediction.
pub fn miou(
    pred: &Mask,
    truth: &Mask,
    n_classes: usize,
    ignore_index: u32,
) -> Result<(f64, Vec<Option<f64>>)> {
    let mut cm = ConfusionMatrix::new(n_classes);
    cm.record(pred, truth, ignore_index);
    Ok((cm.miou()?, cm.per_class_iou()))
}

/// Equal-width confidence bins accumulating count, confidence mass and
/// correct count; empty bins contribute zero to the gap.
#[derive(Debug, Clone, PartialEq)]
pub struct EceAccumulator {
    pub bins: Vec<BinStat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BinStat {
    pub count: u64,
    pub conf_sum: f64,
    pub correct: u64,
}

impl EceAccumulator {
    pub fn new(n_bins: usize) -> Self {
        assert!(n_bins >= 1);
        Self {
            bins: vec![BinStat::default(); n_bins],
        }
    }

    pub fn record(&mut self, confidence: f64, correct: bool) {
        debug_assert!((0.0..=1.0).contains(&confidence));
        let n = self.bins.len();
        let idx = ((confidence * n as f64) as usize).min(n - 1);
        let b = &mut self.bins[idx];
        b.count += 1;
        b.conf_sum += confidence;
        if correct {
            b.correct += 1;
        }
    }

    pub fn merge(&mut self, other: &EceAccumulator) {
        assert_eq!(self.bins.len(), other.bins.len());
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.count += b.count;
            a.conf_sum += b.conf_sum;
            a.correct += b.correct;
        }
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// sum_b (|B_b|/N) * |acc(B_b) - conf(B_b)|
    pub fn ece(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let mut gap = 0.0;
        for b in &self.bins {
            if b.count == 0 {
                continue;
            }
            let acc = b.correct as f64 / b.count as f64;
            let conf = b.conf_sum / b.count as f64;
            gap += (b.count as f64 / total as f64) * (acc - conf).abs();
        }
        gap
    }
}

/// ECE of flat per-pixel confidence/correctness slices.
pub fn ece(max_prob: &[f64], correct: &[bool], n_bins: usize) -> f64 {
    assert_eq!(max_prob.len(), correct.len());
    let mut acc = EceAccumulator::new(n_bins);
    for (&p, &c) in max_prob.iter().zip(correct) {
        acc.record(p, c);
    }
    acc.ece()
}

/// Per-domain evaluation result; `config_hash` ties the report to the exact
/// resolved configuration that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub domain: DomainSpec,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub ece: f64,
    pub n_images: usize,
    pub config_hash: String,
}

impl MetricsReport {
    /// Schema checks shared by every consumer of report JSON.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.miou) {
            return Err(DataError::Metrics(format!("miou {} out of [0,1]", self.miou)));
        }
        if !(0.0..=1.0).contains(&self.ece) {
            return Err(DataError::Metrics(format!("ece {} out of [0,1]", self.ece)));
        }
        for (i, iou) in self.per_class_iou.iter().enumerate() {
            if let Some(v) = iou {
                if !(0.0..=1.0).contains(v) {
                    return Err(DataError::Metrics(format!("class {i} iou {v} out of [0,1]")));
                }
            }
        }
        // miou must be the mean over classes with nonzero union
        let present: Vec<f64> = self.per_class_iou.iter().flatten().cloned().collect();
        if !present.is_empty() {
            let mean = present.iter().sum::<f64>() / present.len() as f64;
            if (mean - self.miou).abs() > 1e-9 {
                return Err(DataError::Metrics(format!(
                    "miou {} is not the mean of per-class IoUs {mean}",
                    self.miou
                )));
            }
        }
        if self.method.is_empty() {
            return Err(DataError::Metrics("empty method".into()));
        }
        Ok(())
    }
}
