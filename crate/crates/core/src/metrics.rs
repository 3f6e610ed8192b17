//! Binary classification metrics with sleep (label 1) as the positive class.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

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

/// Counts agreements of `preds` against `labels`.
pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(CoreError::Input(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(CoreError::Input("no predictions to score".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (i, (&p, &l)) in preds.iter().zip(labels).enumerate() {
        match (p, l) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            (0, 0) => cm.tn += 1,
            _ => return Err(CoreError::Input(format!("entry {i}: values must be 0 or 1, got {p} and {l}"))),
        }
    }
    Ok(cm)
}

/// Metrics of one confusion matrix; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub kappa: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Derives every metric from exact integer counts.
///
/// F1 is `2tp / (2tp + fp + fn)`, the harmonic mean of precision and recall
/// whenever both exist. Kappa is `(n*agree - s) / (n^2 - s)` with `s` the sum
/// of marginal products, undefined when chance agreement is total.
pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let n = cm.total();
    if n == 0 {
        return Err(CoreError::Input("confusion matrix is empty".into()));
    }
    let ConfusionMatrix { tp, fp, fn_, tn } = *cm;
    let (n128, agree) = (n as i128, (tp + tn) as i128);
    let s = ((tp + fp) as i128) * ((tp + fn_) as i128) + ((fn_ + tn) as i128) * ((fp + tn) as i128);
    let kappa = (n128 * n128 != s).then(|| (n128 * agree - s) as f64 / (n128 * n128 - s) as f64);
    Ok(MetricsReport {
        confusion: *cm,
        accuracy: (tp + tn) as f64 / n as f64,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
        kappa,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

impl MetricsReport {
    pub fn from_predictions(preds: &[u8], labels: &[u8]) -> Result<Self> {
        report(&confusion(preds, labels)?)
    }

    /// `key=value` lines; undefined metrics read `undefined`.
    pub fn to_text(&self) -> String {
        let c = &self.confusion;
        let mut s = String::new();
        for (k, v) in [("tp", c.tp), ("fp", c.fp), ("fn", c.fn_), ("tn", c.tn), ("total", c.total())] {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "accuracy={:.6}", self.accuracy);
        for (k, v) in [("precision", self.precision), ("recall", self.recall), ("f1", self.f1), ("kappa", self.kappa)] {
            let _ = writeln!(s, "{k}={}", fmt_opt(v));
        }
        s
    }

    /// JSON object with the same keys; undefined metrics are `null`.
    pub fn to_json(&self) -> String {
        let c = &self.confusion;
        let value = serde_json::json!({
            "tp": c.tp, "fp": c.fp, "fn": c.fn_, "tn": c.tn, "total": c.total(),
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "kappa": self.kappa,
        });
        serde_json::to_string_pretty(&value).expect("plain values serialize")
    }
}
