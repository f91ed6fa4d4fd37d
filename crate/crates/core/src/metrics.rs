//! Confusion-matrix accumulation and the evaluation metric suite
//! (IoU per class, mIoU, F1, precision, recall).
//!
//! Counts are accumulated globally over all pixels of a split (micro
//! aggregation) by default; a per-tile-mean mode is also available and
//! reports label which one was used.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};

/// Pixel-level confusion counts. Merging two counts is fieldwise addition,
/// so accumulation can be sharded across workers and reduced in any order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(self, other: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

fn ensure_binary(mask: &Array2<u8>) -> Result<()> {
    if mask.iter().any(|&v| v > 1) {
        return Err(Error::NonBinaryInput);
    }
    Ok(())
}

/// Add the pixelwise comparison of `pred` vs `gt` to `counts`.
pub fn accumulate(
    counts: ConfusionCounts,
    pred: &Array2<u8>,
    gt: &Array2<u8>,
) -> Result<ConfusionCounts> {
    if pred.dim() != gt.dim() {
        return Err(Error::ShapeMismatch(format!(
            "pred {:?} vs gt {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    ensure_binary(pred)?;
    ensure_binary(gt)?;
    let mut c = counts;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            (0, 0) => c.tn += 1,
            _ => unreachable!(),
        }
    }
    Ok(c)
}

/// The six-metric report. Field names are fixed interface keys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub iou_fg: f64,
    pub iou_bg: f64,
    pub miou: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// 0/0 convention: a ratio whose denominator is zero scores 1.0 when its
/// class is absent from both prediction and ground truth, else 0.0. A
/// correct all-background tile is therefore not punished.
fn ratio(num: u64, den: u64, class_absent_everywhere: bool) -> f64 {
    if den == 0 {
        if class_absent_everywhere {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(c: &ConfusionCounts) -> Result<Metrics> {
    if c.total() == 0 {
        return Err(Error::EmptyCounts);
    }
    let fg_absent = c.tp == 0 && c.fp == 0 && c.fn_ == 0;
    let bg_absent = c.tn == 0 && c.fp == 0 && c.fn_ == 0;
    let iou_fg = ratio(c.tp, c.tp + c.fp + c.fn_, fg_absent);
    let iou_bg = ratio(c.tn, c.tn + c.fp + c.fn_, bg_absent);
    let precision = ratio(c.tp, c.tp + c.fp, fg_absent);
    let recall = ratio(c.tp, c.tp + c.fn_, fg_absent);
    let f1 = if precision + recall == 0.0 {
        if fg_absent {
            1.0
        } else {
            0.0
        }
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics {
        iou_fg,
        iou_bg,
        miou: 0.5 * (iou_fg + iou_bg),
        f1,
        precision,
        recall,
    })
}

/// How dataset-level metrics are aggregated across tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// One confusion matrix over every pixel of the split (default).
    Global,
    /// Metrics per tile, then arithmetic mean over tiles.
    PerTileMean,
}

/// Metrics over a set of (pred, gt) mask pairs under the given aggregation.
pub fn dataset_metrics(
    pairs: &[(Array2<u8>, Array2<u8>)],
    mode: Aggregation,
) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::EmptyCounts);
    }
    match mode {
        Aggregation::Global => {
            let mut c = ConfusionCounts::default();
            for (p, g) in pairs {
                c = accumulate(c, p, g)?;
            }
            compute_metrics(&c)
        }
        Aggregation::PerTileMean => {
            let mut acc = [0.0f64; 6];
            for (p, g) in pairs {
                let m = compute_metrics(&accumulate(ConfusionCounts::default(), p, g)?)?;
                acc[0] += m.iou_fg;
                acc[1] += m.iou_bg;
                acc[2] += m.miou;
                acc[3] += m.f1;
                acc[4] += m.precision;
                acc[5] += m.recall;
            }
            let n = pairs.len() as f64;
            Ok(Metrics {
                iou_fg: acc[0] / n,
                iou_bg: acc[1] / n,
                miou: acc[2] / n,
                f1: acc[3] / n,
                precision: acc[4] / n,
                recall: acc[5] / n,
            })
        }
    }
}

/// Serialize a report as a flat JSON document with the fixed key names
/// plus an `aggregation` label.
pub fn report_json(m: &Metrics, mode: Aggregation) -> String {
    let mut doc = serde_json::Map::new();
    doc.insert("iou_fg".into(), m.iou_fg.into());
    doc.insert("iou_bg".into(), m.iou_bg.into());
    doc.insert("miou".into(), m.miou.into());
    doc.insert("f1".into(), m.f1.into());
    doc.insert("precision".into(), m.precision.into());
    doc.insert("recall".into(), m.recall.into());
    doc.insert(
        "aggregation".into(),
        serde_json::to_value(mode).expect("serializable"),
    );
    serde_json::to_string_pretty(&serde_json::Value::Object(doc)).expect("serializable")
}
