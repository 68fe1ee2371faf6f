//! Binary classification metrics with anomalous as the positive class.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decision threshold on probabilities; a tie is classified normal.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(labels: &[bool], predictions: &[bool]) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(Error::Shape {
            op: "confusion",
            left: vec![labels.len()],
            right: vec![predictions.len()],
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (true, true) => cm.tp += 1,
            (false, true) => cm.fp += 1,
            (true, false) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub mcc: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Precision, recall, F1, accuracy and MCC; zero denominators give 0.
pub fn scalar_metrics(cm: &ConfusionMatrix) -> Result<ScalarMetrics> {
    if cm.total() == 0 {
        return Err(Error::invalid("metrics of an empty confusion matrix"));
    }
    let (tp, fp, fn_, tn) = (cm.tp as f64, cm.fp as f64, cm.fn_ as f64, cm.tn as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    let accuracy = (tp + tn) / (tp + fp + fn_ + tn);
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio(tp * tn - fp * fn_, den);
    Ok(ScalarMetrics {
        precision,
        recall,
        f1,
        accuracy,
        mcc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Samples with score `>= threshold` are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub auc: f64,
    /// Starts at `(0, 0)` with an infinite threshold and ends at `(1, 1)`.
    pub points: Vec<RocPoint>,
}

/// ROC curve over the distinct scores and its trapezoidal area.
///
/// Equal scores form a single threshold step, so the area equals the
/// probability that a random positive outscores a random negative, with
/// ties counted as one half.
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<RocCurve> {
    if labels.len() != scores.len() {
        return Err(Error::Shape {
            op: "roc_auc",
            left: vec![labels.len()],
            right: vec![scores.len()],
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("AUC is undefined unless both classes are present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let prev = *points.last().expect("nonempty");
        let pt = RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        };
        auc += (pt.fpr - prev.fpr) * (pt.tpr + prev.tpr) / 2.0;
        points.push(pt);
    }
    Ok(RocCurve { auc, points })
}

pub fn write_roc_csv(path: impl AsRef<Path>, points: &[RocPoint]) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(err) => Error::io(path, err),
        other => Error::invalid(format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["threshold", "fpr", "tpr"]).map_err(io)?;
    for p in points {
        w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub f1: f64,
    /// `None` when the evaluated set holds a single class.
    pub auc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub mcc: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    /// Scores probabilities against labels at [`THRESHOLD`].
    pub fn from_probabilities(labels: &[bool], probabilities: &[f64]) -> Result<Self> {
        let preds: Vec<bool> = probabilities.iter().map(|&p| p > THRESHOLD).collect();
        Self::from_decisions(labels, &preds, probabilities)
    }

    /// Report from hard decisions, with AUC computed on `scores`.
    pub fn from_decisions(labels: &[bool], predictions: &[bool], scores: &[f64]) -> Result<Self> {
        let cm = confusion(labels, predictions)?;
        let s = scalar_metrics(&cm)?;
        let auc = match roc_auc(labels, scores) {
            Ok(r) => Some(r.auc),
            Err(Error::InvalidArgument(_)) if !scores.iter().any(|p| p.is_nan()) => None,
            Err(e) => return Err(e),
        };
        Ok(MetricsReport {
            n_samples: labels.len(),
            f1: s.f1,
            auc,
            precision: s.precision,
            recall: s.recall,
            mcc: s.mcc,
            accuracy: s.accuracy,
            confusion: cm,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
