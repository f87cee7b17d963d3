use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One classifier input. Label 1 is the positive (abusive or predatory)
/// class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: usize,
    pub source_id: Option<String>,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: usize) -> Self {
        Self {
            text: text.into(),
            label,
            source_id: None,
        }
    }
}

/// Where a dataset came from when it was produced by [`split_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub part: SplitPart,
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub examples: Vec<LabeledExample>,
    pub split: Option<SplitInfo>,
}

impl LabeledDataset {
    pub fn new(examples: Vec<LabeledExample>) -> Self {
        Self {
            examples,
            split: None,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn stats(&self) -> DatasetStats {
        dataset_stats(&self.examples)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }
}

/// Counts and character-length extrema of a labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub positives: usize,
    pub negatives: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// `100 · positives / negatives`; absent without negatives.
    pub imbalance_pct: Option<f64>,
}

pub fn dataset_stats(examples: &[LabeledExample]) -> DatasetStats {
    let positives = examples.iter().filter(|e| e.label == 1).count();
    let negatives = examples.len() - positives;
    let lens = examples.iter().map(|e| e.text.chars().count());
    DatasetStats {
        total: examples.len(),
        positives,
        negatives,
        min_len: lens.clone().min().unwrap_or(0),
        max_len: lens.max().unwrap_or(0),
        imbalance_pct: (negatives > 0).then(|| 100.0 * positives as f64 / negatives as f64),
    }
}

/// Seeded uniform shuffle followed by a prefix split of
/// `round(train_fraction · n)` examples.
pub fn split_dataset(
    examples: &[LabeledExample],
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if examples.is_empty() {
        return Err(Error::data("cannot split an empty dataset"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let mut shuffled = examples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * examples.len() as f64).round() as usize;
    let test = shuffled.split_off(n_train);
    let info = |part| SplitInfo {
        part,
        train_fraction,
        seed,
    };
    Ok((
        LabeledDataset {
            examples: shuffled,
            split: Some(info(SplitPart::Train)),
        },
        LabeledDataset {
            examples: test,
            split: Some(info(SplitPart::Test)),
        },
    ))
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(field: &str, line: usize) -> Result<String> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            other => {
                return Err(Error::data(format!(
                    "line {line}: invalid escape \\{}",
                    other.map(String::from).unwrap_or_default()
                )))
            }
        }
    }
    Ok(out)
}

/// One `label<TAB>text` line per example, text escaped.
pub fn dataset_to_string(examples: &[LabeledExample]) -> String {
    let mut out = String::new();
    for e in examples {
        out.push_str(&e.label.to_string());
        out.push('\t');
        out.push_str(&escape(&e.text));
        out.push('\n');
    }
    out
}

pub fn dataset_from_str(text: &str) -> Result<Vec<LabeledExample>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let n = i + 1;
            let (label, body) = line
                .split_once('\t')
                .ok_or_else(|| Error::data(format!("line {n}: expected label<TAB>text")))?;
            let label = label
                .parse()
                .map_err(|_| Error::data(format!("line {n}: label {label:?} is not an integer")))?;
            Ok(LabeledExample::new(unescape(body, n)?, label))
        })
        .collect()
}

pub fn save_dataset(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(dataset_to_string(examples).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Vec<LabeledExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_str(&text)
}
