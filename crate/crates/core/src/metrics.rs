//! Binary classification metrics. Label 1 is the positive class.
//!
//! Any rate whose denominator is zero is reported as `None` instead of a
//! silent zero. Values are stored at full precision; rounding happens
//! only when a report is rendered as a table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// The same matrix with class 0 treated as positive.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        }
    }
}

/// Tallies predictions against labels.
pub fn confusion(predictions: &[usize], labels: &[usize]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::contract("confusion matrix of zero examples"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            _ => {
                return Err(Error::data(format!(
                    "binary metrics need labels in {{0, 1}}, got prediction {p} and label {y}"
                )))
            }
        }
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `(1 + β²)·P·R / (β²·P + R)`, and 0 when `P = R = 0`.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        return 0.0;
    }
    (1.0 + b2) * precision * recall / den
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub f05: Option<f64>,
}

pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::contract("metrics of an empty confusion matrix"));
    }
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let fb = |beta| Some(f_beta(precision?, recall?, beta));
    Ok(MetricsReport {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        tpr: recall,
        fpr: ratio(cm.fp, cm.fp + cm.tn),
        precision,
        recall,
        f1: fb(1.0),
        f05: fb(0.5),
    })
}

impl MetricsReport {
    fn rows(&self) -> [(&'static str, Option<f64>); 7] {
        [
            ("accuracy", self.accuracy),
            ("tpr", self.tpr),
            ("fpr", self.fpr),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("f0.5", self.f05),
        ]
    }

    /// Two-column text table rounded to `decimals` places; absent values
    /// print as `n/a`.
    pub fn to_table(&self, cm: &ConfusionMatrix, decimals: usize) -> String {
        let mut out = String::new();
        writeln!(out, "{:<10} {:>8}", "metric", "value").unwrap();
        for (name, v) in self.rows() {
            let cell = v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.decimals$}"));
            writeln!(out, "{name:<10} {cell:>8}").unwrap();
        }
        writeln!(
            out,
            "TP={} TN={} FP={} FN={} (n={})",
            cm.tp,
            cm.tn,
            cm.fp,
            cm.fn_,
            cm.total()
        )
        .unwrap();
        out
    }

    /// One JSON object per metric, then one for the counts.
    pub fn to_jsonl(&self, cm: &ConfusionMatrix) -> String {
        let mut out = String::new();
        for (name, v) in self.rows() {
            let line = serde_json::json!({ "metric": name, "value": v });
            writeln!(out, "{line}").unwrap();
        }
        writeln!(out, "{}", serde_json::json!({ "confusion": cm })).unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let cm = confusion(&[1, 1, 0, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(
            cm,
            ConfusionMatrix {
                tp: 2,
                tn: 2,
                fp: 0,
                fn_: 0
            }
        );
        let r = report(&cm).unwrap();
        for v in [r.accuracy, r.tpr, r.precision, r.f1, r.f05] {
            assert_eq!(v, Some(1.0));
        }
        assert_eq!(r.fpr, Some(0.0));
    }

    #[test]
    fn hand_computed_report() {
        let preds = [1, 1, 1, 0, 1, 0, 0, 0, 0, 0];
        let labels = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let cm = confusion(&preds, &labels).unwrap();
        assert_eq!(
            cm,
            ConfusionMatrix {
                tp: 3,
                tn: 5,
                fp: 1,
                fn_: 1
            }
        );
        let r = report(&cm).unwrap();
        assert_eq!(r.accuracy, Some(0.8));
        assert_eq!(r.tpr, Some(0.75));
        assert_eq!(r.fpr, Some(1.0 / 6.0));
        assert_eq!(r.precision, Some(0.75));
    }

    #[test]
    fn degenerate_cases() {
        let cm = confusion(&[0, 0, 0], &[1, 1, 1]).unwrap();
        assert_eq!((cm.tp, cm.fn_), (0, 3));
        let r = report(&cm).unwrap();
        assert_eq!(r.fpr, None);
        assert_eq!(r.precision, None);
        assert_eq!(r.f1, None);
        assert!(matches!(confusion(&[1], &[1, 0]), Err(Error::Contract(_))));
        assert!(matches!(
            report(&ConfusionMatrix::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn f_beta_values() {
        assert!((f_beta(0.5, 1.0, 1.0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((f_beta(0.5, 1.0, 0.5) - 0.625 / 1.125).abs() < 1e-12);
        assert_eq!(f_beta(0.0, 0.0, 1.0), 0.0);
        assert!((f_beta(0.3, 0.3, 2.0) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rendering() {
        let cm = ConfusionMatrix {
            tp: 3,
            tn: 5,
            fp: 1,
            fn_: 1,
        };
        let r = report(&cm).unwrap();
        let table = r.to_table(&cm, 2);
        assert!(table.contains("accuracy       0.80"));
        let jsonl = r.to_jsonl(&cm);
        assert_eq!(jsonl.lines().count(), 8);
        assert!(jsonl.contains(r#""fn":1"#));
    }
}
