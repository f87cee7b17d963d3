use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How per-class loss weights are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeights {
    /// Every class weighs 1.
    #[default]
    Uniform,
    /// `N / (C · n_c)` from the training labels; absent classes get 0.
    InverseFrequency,
    Explicit(Vec<f64>),
}

impl ClassWeights {
    /// Concrete weight vector for `n_classes` classes given the training
    /// labels.
    pub fn resolve(&self, n_classes: usize, labels: &[usize]) -> Result<Vec<f64>> {
        let w = match self {
            ClassWeights::Uniform => vec![1.0; n_classes],
            ClassWeights::InverseFrequency => {
                let mut counts = vec![0usize; n_classes];
                for &y in labels {
                    if y >= n_classes {
                        return Err(Error::data(format!(
                            "label {y} out of range for {n_classes} classes"
                        )));
                    }
                    counts[y] += 1;
                }
                let n = labels.len() as f64;
                counts
                    .iter()
                    .map(|&c| {
                        if c == 0 {
                            0.0
                        } else {
                            n / (n_classes as f64 * c as f64)
                        }
                    })
                    .collect()
            }
            ClassWeights::Explicit(w) => {
                if w.len() != n_classes {
                    return Err(Error::config(format!(
                        "{} explicit class weights for {n_classes} classes",
                        w.len()
                    )));
                }
                w.clone()
            }
        };
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config(
                "class weights must be finite and non-negative",
            ));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::config("class weights are all zero"));
        }
        Ok(w)
    }
}

/// Which end of an over-long sequence survives truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Keep the last `max_seq_len` tokens.
    #[default]
    Tail,
    /// Keep the first `max_seq_len` tokens.
    Head,
}

impl Truncation {
    pub fn apply<T: Copy>(self, ids: &[T], max_len: usize) -> Vec<T> {
        if ids.len() <= max_len {
            return ids.to_vec();
        }
        match self {
            Truncation::Tail => ids[ids.len() - max_len..].to_vec(),
            Truncation::Head => ids[..max_len].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub adam_betas: (f64, f64),
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub class_weights: ClassWeights,
    pub seed: u64,
    pub truncation: Truncation,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            adam_eps: 1e-8,
            adam_betas: (0.9, 0.999),
            weight_decay: 0.01,
            epochs: 20,
            batch_size: 8,
            class_weights: ClassWeights::Uniform,
            seed: 0,
            truncation: Truncation::Tail,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::config("adam_eps must be positive"));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config(format!(
                "adam_betas must lie in [0, 1), got ({b1}, {b2})"
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if let ClassWeights::Explicit(w) = &self.class_weights {
            if w.iter().all(|&v| v == 0.0) {
                return Err(Error::config("class weights are all zero"));
            }
        }
        Ok(())
    }
}
