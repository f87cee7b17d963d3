use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Averages over one completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub seconds: f64,
}

/// Loss after one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

impl TrainingLog {
    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    /// One JSON object per epoch: `epoch`, `loss`, `accuracy`, `seconds`.
    pub fn epochs_jsonl(&self) -> String {
        lines(&self.epochs)
    }

    /// One JSON object per epoch without the wall-clock field, so that
    /// reruns with the same seed produce identical bytes.
    pub fn curve_jsonl(&self) -> String {
        let curve: Vec<serde_json::Value> = self
            .epochs
            .iter()
            .map(
                |e| serde_json::json!({ "epoch": e.epoch, "loss": e.loss, "accuracy": e.accuracy }),
            )
            .collect();
        lines(&curve)
    }

    /// One JSON object per optimizer step: `step`, `epoch`, `loss`.
    pub fn steps_jsonl(&self) -> String {
        lines(&self.steps)
    }

    /// Equality ignoring wall-clock time, which no two runs share.
    pub fn same_trajectory(&self, other: &TrainingLog) -> bool {
        self.steps == other.steps
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.loss.to_bits() == b.loss.to_bits()
                    && a.accuracy.to_bits() == b.accuracy.to_bits()
            })
    }
}

fn lines<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(out, "{line}").expect("writing to a String");
    }
    out
}
