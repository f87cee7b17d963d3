//! Python bindings: tokenizer, model with LoRA adapters, training,
//! inference, metrics and preprocessing.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::guardlora as core;
use core::corpus::{self, LabeledExample};
use core::lora::{self, LoraConfig};
use core::model::{MatrixRole, ModelConfig};
use core::numerics::Tensor;
use core::tokenizer::{BpeVocab, TokenId, DEFAULT_VOCAB_SIZE};
use core::training::{self, ClassWeights, TrainingConfig, TrainingLog, Truncation};

fn to_py(e: core::Error) -> PyErr {
    use core::Error as E;
    match e {
        E::Io { .. } => PyOSError::new_err(e.to_string()),
        E::Contract(_) | E::EmptyTape(_) | E::NonFinite { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn truncation(name: &str) -> PyResult<Truncation> {
    match name {
        "tail" => Ok(Truncation::Tail),
        "head" => Ok(Truncation::Head),
        other => Err(PyValueError::new_err(format!(
            "truncation must be 'tail' or 'head', not {other:?}"
        ))),
    }
}

fn class_weights(spec: Option<Vec<f64>>, inverse_frequency: bool) -> ClassWeights {
    match (spec, inverse_frequency) {
        (Some(w), _) => ClassWeights::Explicit(w),
        (None, true) => ClassWeights::InverseFrequency,
        (None, false) => ClassWeights::Uniform,
    }
}

/// Per-epoch records as a list of dicts.
fn epochs<'py>(py: Python<'py>, log: &TrainingLog) -> PyResult<Vec<Bound<'py, PyDict>>> {
    log.epochs
        .iter()
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("epoch", e.epoch)?;
            d.set_item("loss", e.loss)?;
            d.set_item("accuracy", e.accuracy)?;
            d.set_item("seconds", e.seconds)?;
            Ok(d)
        })
        .collect()
}

/// Byte-level BPE tokenizer.
#[pyclass(name = "Tokenizer", module = "guardlora")]
struct PyTokenizer {
    inner: BpeVocab,
}

#[pymethods]
impl PyTokenizer {
    /// The 256 byte tokens plus padding, no merges.
    #[new]
    fn new() -> Self {
        Self {
            inner: BpeVocab::base(),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (corpus, vocab_size = DEFAULT_VOCAB_SIZE))]
    fn train(corpus: Vec<String>, vocab_size: usize) -> PyResult<Self> {
        Ok(Self {
            inner: core::tokenizer::train_bpe(&corpus, vocab_size, 0).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: BpeVocab::load(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    fn encode(&self, text: &str) -> Vec<TokenId> {
        self.inner.encode(text)
    }

    fn decode(&self, ids: Vec<TokenId>) -> PyResult<String> {
        self.inner.decode(&ids).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Tokenizer(vocab_size={})", self.inner.len())
    }
}

/// Decoder-only transformer with an optional set of LoRA adapters.
#[pyclass(name = "Model", module = "guardlora")]
struct PyModel {
    inner: core::model::Model,
}

#[pymethods]
impl PyModel {
    /// Fresh model; unspecified sizes take the desk-scale defaults.
    #[new]
    #[pyo3(signature = (seed = 0, vocab_size = None, d_model = None, n_layers = None, n_heads = None, d_ff = None, max_seq_len = None, n_classes = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        seed: u64,
        vocab_size: Option<usize>,
        d_model: Option<usize>,
        n_layers: Option<usize>,
        n_heads: Option<usize>,
        d_ff: Option<usize>,
        max_seq_len: Option<usize>,
        n_classes: Option<usize>,
    ) -> PyResult<Self> {
        let d = ModelConfig::default();
        let config = ModelConfig {
            vocab_size: vocab_size.unwrap_or(d.vocab_size),
            d_model: d_model.unwrap_or(d.d_model),
            n_layers: n_layers.unwrap_or(d.n_layers),
            n_heads: n_heads.unwrap_or(d.n_heads),
            d_ff: d_ff.unwrap_or(d.d_ff),
            max_seq_len: max_seq_len.unwrap_or(d.max_seq_len),
            n_classes: n_classes.unwrap_or(d.n_classes),
            ..d
        };
        Ok(Self {
            inner: core::model::Model::init(config, seed).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: core::model::Model::load_checkpoint(&path).py()?,
        })
    }

    /// Writes the base checkpoint; fails while adapters are attached.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_checkpoint(&path).py()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = &self.inner.config;
        let d = PyDict::new(py);
        d.set_item("vocab_size", c.vocab_size)?;
        d.set_item("d_model", c.d_model)?;
        d.set_item("n_layers", c.n_layers)?;
        d.set_item("n_heads", c.n_heads)?;
        d.set_item("d_ff", c.d_ff)?;
        d.set_item("max_seq_len", c.max_seq_len)?;
        d.set_item("n_classes", c.n_classes)?;
        d.set_item("rope_theta", c.rope_theta)?;
        d.set_item("rmsnorm_eps", c.rmsnorm_eps)?;
        Ok(d)
    }

    /// `(total, trainable)` parameter counts.
    fn param_counts(&self) -> (usize, usize) {
        let c = self.inner.count_params();
        (c.total, c.trainable)
    }

    #[getter]
    fn has_adapters(&self) -> bool {
        self.inner.adapters.is_some()
    }

    #[pyo3(signature = (rank = 8, alpha = 16.0, dropout = 0.1, targets = vec!["query".to_string(), "value".to_string()], seed = 0))]
    fn inject_lora(
        &mut self,
        rank: usize,
        alpha: f64,
        dropout: f64,
        targets: Vec<String>,
        seed: u64,
    ) -> PyResult<()> {
        let targets = targets
            .iter()
            .map(|t| t.parse::<MatrixRole>())
            .collect::<core::Result<Vec<_>>>()
            .py()?;
        let config = LoraConfig {
            rank,
            alpha,
            dropout,
            targets,
            ..LoraConfig::default()
        };
        lora::inject(&mut self.inner, &config, seed).py()
    }

    fn merge(&mut self) -> PyResult<()> {
        self.inner.merge_adapters().py()
    }

    fn save_adapters(&self, path: PathBuf) -> PyResult<()> {
        lora::save_adapters(&self.inner, &path).py()
    }

    fn load_adapters(&mut self, path: PathBuf) -> PyResult<()> {
        lora::load_adapters(&mut self.inner, &path).py()
    }

    /// Next-token language-model training of every base weight. Returns
    /// the per-epoch log.
    #[pyo3(signature = (tokenizer, corpus, epochs = 5, learning_rate = 1e-3, batch_size = 8, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn pretrain<'py>(
        &mut self,
        py: Python<'py>,
        tokenizer: &PyTokenizer,
        corpus: Vec<String>,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let config = TrainingConfig {
            epochs,
            learning_rate,
            batch_size,
            seed,
            ..TrainingConfig::default()
        };
        let vocab = &tokenizer.inner;
        let model = &mut self.inner;
        let log = py
            .detach(|| training::pretrain_lm(model, vocab, &corpus, &config))
            .py()?;
        self::epochs(py, &log)
    }

    /// Trains the adapters and classifier head on labeled texts.
    #[pyo3(signature = (tokenizer, texts, labels, epochs = 20, learning_rate = 1e-3, batch_size = 8, seed = 0, class_weights = None, inverse_frequency = false, truncation = "tail"))]
    #[allow(clippy::too_many_arguments)]
    fn finetune<'py>(
        &mut self,
        py: Python<'py>,
        tokenizer: &PyTokenizer,
        texts: Vec<String>,
        labels: Vec<usize>,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
        class_weights: Option<Vec<f64>>,
        inverse_frequency: bool,
        truncation: &str,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        if texts.len() != labels.len() {
            return Err(PyValueError::new_err(format!(
                "{} texts but {} labels",
                texts.len(),
                labels.len()
            )));
        }
        let config = TrainingConfig {
            epochs,
            learning_rate,
            batch_size,
            seed,
            class_weights: self::class_weights(class_weights, inverse_frequency),
            truncation: self::truncation(truncation)?,
            ..TrainingConfig::default()
        };
        let data: Vec<LabeledExample> = texts
            .into_iter()
            .zip(labels)
            .map(|(t, l)| LabeledExample::new(t, l))
            .collect();
        let vocab = &tokenizer.inner;
        let model = &mut self.inner;
        let log = py
            .detach(|| training::finetune_classifier(model, vocab, &data, &config))
            .py()?;
        self::epochs(py, &log)
    }

    /// `(label, probabilities)` for each text.
    #[pyo3(signature = (tokenizer, texts, truncation = "tail"))]
    fn predict(
        &self,
        tokenizer: &PyTokenizer,
        texts: Vec<String>,
        truncation: &str,
    ) -> PyResult<Vec<(usize, Vec<f64>)>> {
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let preds = training::predict(
            &self.inner,
            &tokenizer.inner,
            &refs,
            self::truncation(truncation)?,
        )
        .py()?;
        Ok(preds
            .into_iter()
            .map(|p| (p.label, p.probabilities))
            .collect())
    }

    /// Evaluation-mode class logits for one token sequence.
    fn classifier_logits(&self, ids: Vec<TokenId>) -> PyResult<Vec<f64>> {
        Ok(self.inner.forward_classifier(&ids).py()?.into_data())
    }

    fn __repr__(&self) -> String {
        let c = &self.inner.config;
        format!(
            "Model(d_model={}, n_layers={}, n_heads={}, vocab_size={}, adapters={})",
            c.d_model,
            c.n_layers,
            c.n_heads,
            c.vocab_size,
            self.inner.adapters.is_some()
        )
    }
}

/// Class-weighted mean cross-entropy of a `[N × C]` logit matrix.
#[pyfunction]
fn weighted_cross_entropy(
    logits: Vec<Vec<f64>>,
    targets: Vec<usize>,
    weights: Vec<f64>,
) -> PyResult<f64> {
    let rows: Vec<&[f64]> = logits.iter().map(Vec::as_slice).collect();
    let x = Tensor::from_rows(&rows).py()?;
    training::weighted_cross_entropy(&x, &targets, &weights).py()
}

/// Binary metrics as a dict; undefined ratios are `None`.
#[pyfunction]
fn metrics<'py>(
    py: Python<'py>,
    predictions: Vec<usize>,
    labels: Vec<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let cm = core::metrics::confusion(&predictions, &labels).py()?;
    let r = core::metrics::report(&cm).py()?;
    let d = PyDict::new(py);
    d.set_item("accuracy", r.accuracy)?;
    d.set_item("tpr", r.tpr)?;
    d.set_item("fpr", r.fpr)?;
    d.set_item("precision", r.precision)?;
    d.set_item("recall", r.recall)?;
    d.set_item("f1", r.f1)?;
    d.set_item("f0.5", r.f05)?;
    d.set_item("tp", cm.tp)?;
    d.set_item("tn", cm.tn)?;
    d.set_item("fp", cm.fp)?;
    d.set_item("fn", cm.fn_)?;
    Ok(d)
}

/// `(text, label, conversation_id)`.
type Labeled = (String, usize, Option<String>);

/// Parses, filters and labels a PAN12 XML file. Returns the labeled
/// `(text, label, conversation_id)` triples and the filter counts.
#[pyfunction]
fn preprocess_pan12<'py>(
    py: Python<'py>,
    xml: PathBuf,
    predators: PathBuf,
) -> PyResult<(Vec<Labeled>, Bound<'py, PyDict>)> {
    let convs = corpus::parse_pan12_xml(&xml).py()?;
    let (kept, stats) = corpus::filter_conversations(&convs);
    let ids = corpus::load_predator_ids(&predators).py()?;
    let examples = corpus::label_conversations(&kept, &ids)
        .into_iter()
        .map(|e| (e.text, e.label, e.source_id))
        .collect();
    let d = PyDict::new(py);
    d.set_item("input", stats.input)?;
    d.set_item("kept", stats.kept)?;
    d.set_item("removed_author_count", stats.removed_author_count)?;
    d.set_item("removed_too_short", stats.removed_too_short)?;
    Ok((examples, d))
}

#[pyfunction]
fn synthetic_documents(n: usize, seed: u64) -> Vec<String> {
    corpus::synthetic::synthetic_documents(n, seed)
}

/// Balanced labeled texts where label 1 means an insult is present.
#[pyfunction]
fn keyword_task(n: usize, seed: u64) -> Vec<(String, usize)> {
    corpus::synthetic::keyword_task(n, seed)
        .into_iter()
        .map(|e| (e.text, e.label))
        .collect()
}

/// Runs the command-line interface with `args` (without the program
/// name) and returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("guardlora".to_string())
        .chain(args)
        .collect();
    py.detach(|| core::cli::run(argv))
}

#[pymodule(name = "guardlora")]
fn guardlora(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("PAD_ID", core::tokenizer::PAD_ID)?;
    m.add_class::<PyTokenizer>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(weighted_cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess_pan12, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_documents, m)?)?;
    m.add_function(wrap_pyfunction!(keyword_task, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
