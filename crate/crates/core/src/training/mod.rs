//! Training objectives, the optimizer and the two training loops.
//!
//! Pretraining minimizes next-token cross-entropy with every base weight
//! trainable. Fine-tuning minimizes class-weighted cross-entropy of the
//! classifier head while only LoRA factors and the head receive updates.
//! Both loops process each sequence of a mini-batch on its own (no padded
//! batching) and concatenate the resulting logits into one loss.

mod config;
mod log;
mod loss;
mod optim;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::LabeledExample;
use crate::error::{Error, Result};
use crate::model::{BoundModel, Heads, Mode, Model};
use crate::numerics::{softmax_rows, Tape, Tensor, Var};
use crate::tokenizer::{BpeVocab, TokenId, PAD_ID};

pub use config::{ClassWeights, TrainingConfig, Truncation};
pub use log::{EpochRecord, StepRecord, TrainingLog};
pub use loss::weighted_cross_entropy;
pub use optim::AdamW;

const SHUFFLE_STREAM: u64 = 1 << 32;
const DROPOUT_STREAM: u64 = 2 << 32;

/// A generator for one purpose and index, derived from the run seed.
fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose | index);
    rng
}

/// Errors unless every token id the tokenizer can emit fits the model.
pub fn check_vocab(model: &Model, vocab: &BpeVocab) -> Result<()> {
    if vocab.len() > model.config.vocab_size {
        return Err(Error::config(format!(
            "tokenizer has {} tokens but the model embeds only {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    Ok(())
}

/// Token ids for classification: the encoded text truncated to
/// `max_len − 1` tokens, followed by `PAD_ID` as a fixed read-out
/// position. The classifier reads the final position, so ending every
/// input on the same token keeps the decision from hinging on whichever
/// sub-word fragment happens to close the text.
pub fn encode_for_classifier(
    vocab: &BpeVocab,
    text: &str,
    max_len: usize,
    truncation: Truncation,
) -> Vec<TokenId> {
    let mut ids = truncation.apply(&vocab.encode(text), max_len.saturating_sub(1));
    ids.push(PAD_ID);
    ids
}

/// Splits a token stream into overlapping next-token windows of at most
/// `max_len + 1` tokens; consecutive windows share one token.
fn lm_windows(ids: &[TokenId], max_len: usize) -> Vec<Vec<TokenId>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < ids.len() {
        let end = (start + max_len + 1).min(ids.len());
        out.push(ids[start..end].to_vec());
        start += max_len;
    }
    out
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

struct Sample {
    ids: Vec<TokenId>,
    targets: Vec<usize>,
}

type Forward = fn(&Model, &mut Tape, &BoundModel, &[TokenId], &mut Mode<'_>) -> Result<Var>;

fn lm_forward(
    m: &Model,
    t: &mut Tape,
    b: &BoundModel,
    ids: &[TokenId],
    mode: &mut Mode<'_>,
) -> Result<Var> {
    m.lm_logits(t, b, ids, mode)
}

fn classifier_forward(
    m: &Model,
    t: &mut Tape,
    b: &BoundModel,
    ids: &[TokenId],
    mode: &mut Mode<'_>,
) -> Result<Var> {
    m.classifier_logits(t, b, ids, mode)
}

fn train_epochs(
    model: &mut Model,
    samples: &[Sample],
    heads: Heads,
    forward: Forward,
    class_weights: &[f64],
    config: &TrainingConfig,
) -> Result<TrainingLog> {
    let mut opt = AdamW::new(
        config.learning_rate,
        config.adam_betas,
        config.adam_eps,
        config.weight_decay,
    );
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        let clock = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut stream_rng(config.seed, SHUFFLE_STREAM, epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut dropout_rng = stream_rng(config.seed, DROPOUT_STREAM, step as u64);
            let mut mode = Mode::Train(&mut dropout_rng);
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, heads, true);
            let mut parts = Vec::with_capacity(chunk.len());
            let mut targets = Vec::new();
            for &i in chunk {
                let s = &samples[i];
                parts.push(forward(model, &mut tape, &bound, &s.ids, &mut mode)?);
                targets.extend_from_slice(&s.targets);
            }
            let logits = tape.concat_rows(&parts)?;
            let loss = tape.weighted_cross_entropy(logits, &targets, class_weights)?;
            let value = tape.value(loss).data()[0];
            let lv = tape.value(logits);
            correct += targets
                .iter()
                .enumerate()
                .filter(|&(r, &y)| argmax(lv.row(r)) == y)
                .count();
            seen += targets.len();

            tape.backward(loss)?;
            let mut grads = BTreeMap::new();
            for (name, v) in bound.trainable() {
                if let Some(g) = tape.take_grad(*v) {
                    grads.insert(name.clone(), g);
                }
            }
            let names: BTreeSet<&String> = bound.trainable().iter().map(|(n, _)| n).collect();
            let params = model
                .trainable_params_mut()
                .into_iter()
                .filter(|(n, _)| names.contains(n))
                .collect();
            opt.step(params, &grads)?;

            step += 1;
            log.steps.push(StepRecord {
                step,
                epoch,
                loss: value,
            });
            loss_sum += value;
            batches += 1;
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: correct as f64 / seen as f64,
            seconds: clock.elapsed().as_secs_f64(),
        };
        ::log::info!(
            "epoch {epoch}: loss {:.6} accuracy {:.4} ({:.1}s)",
            record.loss,
            record.accuracy,
            record.seconds
        );
        log.epochs.push(record);
    }
    Ok(log)
}

/// Self-supervised next-token training over `corpus`. Every base weight
/// is unfrozen; the classifier head takes no part in this loss and stays
/// unchanged. Epoch accuracy is next-token argmax accuracy.
pub fn pretrain_lm<S: AsRef<str>>(
    model: &mut Model,
    vocab: &BpeVocab,
    corpus: &[S],
    config: &TrainingConfig,
) -> Result<TrainingLog> {
    config.validate()?;
    check_vocab(model, vocab)?;
    if model.adapters.is_some() {
        return Err(Error::contract(
            "pretraining a model that carries LoRA adapters",
        ));
    }
    if corpus.is_empty() {
        return Err(Error::data("pretraining corpus is empty"));
    }
    let samples: Vec<Sample> = corpus
        .iter()
        .flat_map(|doc| lm_windows(&vocab.encode(doc.as_ref()), model.config.max_seq_len))
        .map(|w| Sample {
            ids: w[..w.len() - 1].to_vec(),
            targets: w[1..].to_vec(),
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::data(
            "pretraining corpus has no document of at least two tokens",
        ));
    }
    model.weights.set_frozen(false);
    let weights = vec![1.0; model.config.vocab_size];
    train_epochs(model, &samples, Heads::LM, lm_forward, &weights, config)
}

/// Supervised fine-tuning of an adapted model on labeled text. Only the
/// LoRA factors and the classifier head change.
pub fn finetune_classifier(
    model: &mut Model,
    vocab: &BpeVocab,
    train: &[LabeledExample],
    config: &TrainingConfig,
) -> Result<TrainingLog> {
    config.validate()?;
    check_vocab(model, vocab)?;
    if model.adapters.is_none() {
        return Err(Error::contract(
            "fine-tuning needs LoRA adapters; inject them first",
        ));
    }
    if train.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    let n_classes = model.config.n_classes;
    if let Some(bad) = train.iter().find(|e| e.label >= n_classes) {
        return Err(Error::data(format!(
            "label {} out of range for {n_classes} classes",
            bad.label
        )));
    }
    let labels: Vec<usize> = train.iter().map(|e| e.label).collect();
    let weights = config.class_weights.resolve(n_classes, &labels)?;
    let samples: Vec<Sample> = train
        .iter()
        .map(|e| Sample {
            ids: encode_for_classifier(vocab, &e.text, model.config.max_seq_len, config.truncation),
            targets: vec![e.label],
        })
        .collect();
    train_epochs(
        model,
        &samples,
        Heads::CLASSIFIER,
        classifier_forward,
        &weights,
        config,
    )
}

/// Class probabilities and the most probable class for one text.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f64>,
}

/// Evaluation-mode classification of each text, in order.
pub fn predict(
    model: &Model,
    vocab: &BpeVocab,
    texts: &[&str],
    truncation: Truncation,
) -> Result<Vec<Prediction>> {
    check_vocab(model, vocab)?;
    texts
        .iter()
        .map(|text| {
            let ids = encode_for_classifier(vocab, text, model.config.max_seq_len, truncation);
            let logits = model.forward_classifier(&ids)?;
            let c = logits.len();
            let probs = softmax_rows(&logits.reshape(vec![1, c])?)?;
            Ok(Prediction {
                label: argmax(probs.data()),
                probabilities: probs.into_data(),
            })
        })
        .collect()
}

/// Predicted labels for a labeled set, in order.
pub fn predict_labels(
    model: &Model,
    vocab: &BpeVocab,
    examples: &[LabeledExample],
    truncation: Truncation,
) -> Result<Vec<usize>> {
    let texts: Vec<&str> = examples.iter().map(|e| e.text.as_str()).collect();
    Ok(predict(model, vocab, &texts, truncation)?
        .into_iter()
        .map(|p| p.label)
        .collect())
}

/// Classifier logits for a batch of token sequences, `[n × n_classes]`.
pub fn classifier_logits_batch(model: &Model, batch: &[Vec<TokenId>]) -> Result<Tensor> {
    let rows = batch
        .iter()
        .map(|ids| model.forward_classifier(ids).map(Tensor::into_data))
        .collect::<Result<Vec<_>>>()?;
    Tensor::new(vec![rows.len(), model.config.n_classes], rows.concat())
}
