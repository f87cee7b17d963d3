//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Instant;

use guardlora::corpus::{synthetic::keyword_task, LabeledExample};
use guardlora::lora::{self, LoraConfig};
use guardlora::model::{Heads, MatrixRole, Mode, Model, ModelConfig};
use guardlora::numerics::gradcheck::max_relative_error;
use guardlora::numerics::{Tape, Tensor, Var};
use guardlora::tokenizer::BpeVocab;
use guardlora::training::TrainingConfig;
use guardlora::{corpus, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 40,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 12,
        max_seq_len: 10,
        n_classes: 2,
        ..ModelConfig::default()
    }
}

pub fn random_ids(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> Vec<usize> {
    let len = rng.random_range(1..=max_len);
    (0..len).map(|_| rng.random_range(0..vocab)).collect()
}

/// One gradient-check instance: an operation applied to random inputs.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub op: &'static str,
    pub max_rel_error: f64,
}

type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

/// Compares tape gradients of `Σ op(inputs) ⊙ P`, with `P` a fixed random
/// projection, against central differences for every input entry.
fn check_op(inputs: &[Tensor], build: &Build<'_>, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut probe = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| probe.leaf(x.clone(), true)).collect();
    let out = build(&mut probe, &vars)?;
    let proj = Tensor::randn(probe.value(out).shape(), 1.0, rng);
    let objective = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let o = build(tape, vars)?;
        let p = tape.constant(proj.clone());
        let m = tape.mul(o, p)?;
        tape.sum(m)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let loss = objective(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        let mut f = |xi: &Tensor| -> Result<f64> {
            let mut t = Tape::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, x)| t.constant(if j == i { xi.clone() } else { x.clone() }))
                .collect();
            let l = objective(&mut t, &vs)?;
            Ok(t.value(l).data()[0])
        };
        worst = worst.max(max_relative_error(&mut f, input, &analytic, None)?);
    }
    Ok(worst)
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// Gain vectors away from zero keep RMSNorm well conditioned.
fn positive(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::vector((0..n).map(|_| rng.random_range(0.5..1.5)).collect()).unwrap()
}

pub fn primitive_case(op: &'static str, rng: &mut ChaCha8Rng) -> Result<f64> {
    let r = rng.random_range(1..5);
    let c = rng.random_range(1..5);
    match op {
        "matmul" => {
            let k = rng.random_range(1..5);
            let ins = [randn(rng, &[r, k]), randn(rng, &[k, c])];
            check_op(&ins, &|t, v| t.matmul(v[0], v[1]), rng)
        }
        "linear" => {
            let k = rng.random_range(1..5);
            let ins = [randn(rng, &[r, k]), randn(rng, &[c, k])];
            check_op(&ins, &|t, v| t.linear(v[0], v[1]), rng)
        }
        "add" => {
            let ins = [randn(rng, &[r, c]), randn(rng, &[r, c])];
            check_op(&ins, &|t, v| t.add(v[0], v[1]), rng)
        }
        "mul" => {
            let ins = [randn(rng, &[r, c]), randn(rng, &[r, c])];
            check_op(&ins, &|t, v| t.mul(v[0], v[1]), rng)
        }
        "scale" => {
            let factor = rng.random_range(-3.0..3.0);
            let ins = [randn(rng, &[r, c])];
            check_op(&ins, &move |t, v| t.scale(v[0], factor), rng)
        }
        "silu" => {
            let ins = [randn(rng, &[r, c])];
            check_op(&ins, &|t, v| t.silu(v[0]), rng)
        }
        "sum" => {
            let ins = [randn(rng, &[r, c])];
            check_op(&ins, &|t, v| t.sum(v[0]), rng)
        }
        "softmax_rows" => {
            let ins = [randn(rng, &[r, c + 1])];
            check_op(&ins, &|t, v| t.softmax_rows(v[0]), rng)
        }
        "rmsnorm" => {
            let ins = [randn(rng, &[r, c + 1]), positive(rng, c + 1)];
            check_op(&ins, &|t, v| t.rmsnorm(v[0], v[1], 1e-6), rng)
        }
        "rope" => {
            let heads = rng.random_range(1..3);
            let head_dim = 2 * rng.random_range(1..3);
            let start = rng.random_range(0..5);
            let ins = [randn(rng, &[r, heads * head_dim])];
            check_op(
                &ins,
                &move |t, v| t.rope(v[0], head_dim, start, 10_000.0),
                rng,
            )
        }
        "causal_attention" => {
            let heads = rng.random_range(1..3);
            let width = heads * rng.random_range(1..4);
            let ins = [
                randn(rng, &[r, width]),
                randn(rng, &[r, width]),
                randn(rng, &[r, width]),
            ];
            check_op(
                &ins,
                &move |t, v| t.causal_attention(v[0], v[1], v[2], heads),
                rng,
            )
        }
        "embedding" => {
            let rows = rng.random_range(2..6);
            let ids: Vec<usize> = (0..r + 1).map(|_| rng.random_range(0..rows)).collect();
            let ins = [randn(rng, &[rows, c])];
            check_op(&ins, &move |t, v| t.embedding(v[0], &ids), rng)
        }
        "row" => {
            let index = rng.random_range(0..r);
            let ins = [randn(rng, &[r, c])];
            check_op(&ins, &move |t, v| t.row(v[0], index), rng)
        }
        "concat_rows" => {
            let ins = [
                randn(rng, &[r, c]),
                randn(rng, &[1, c]),
                randn(rng, &[2, c]),
            ];
            check_op(&ins, &|t, v| t.concat_rows(v), rng)
        }
        "weighted_cross_entropy" => {
            let classes = c + 1;
            let targets: Vec<usize> = (0..r).map(|_| rng.random_range(0..classes)).collect();
            let weights: Vec<f64> = (0..classes).map(|_| rng.random_range(0.2..3.0)).collect();
            let ins = [randn(rng, &[r, classes])];
            check_op(
                &ins,
                &move |t, v| t.weighted_cross_entropy(v[0], &targets, &weights),
                rng,
            )
        }
        other => panic!("unknown primitive {other}"),
    }
}

pub const PRIMITIVES: [&str; 15] = [
    "matmul",
    "linear",
    "add",
    "mul",
    "scale",
    "silu",
    "sum",
    "softmax_rows",
    "rmsnorm",
    "rope",
    "causal_attention",
    "embedding",
    "row",
    "concat_rows",
    "weighted_cross_entropy",
];

/// Batch classifier loss of `model` in evaluation mode.
fn classifier_loss(
    model: &Model,
    tape: &mut Tape,
    track: bool,
    batch: &[Vec<usize>],
    targets: &[usize],
    weights: &[f64],
) -> Result<(Var, Vec<(String, Var)>)> {
    let bound = model.bind(tape, Heads::CLASSIFIER, track);
    let rows = batch
        .iter()
        .map(|ids| model.classifier_logits(tape, &bound, ids, &mut Mode::Eval))
        .collect::<Result<Vec<_>>>()?;
    let logits = tape.concat_rows(&rows)?;
    let loss = tape.weighted_cross_entropy(logits, targets, weights)?;
    Ok((loss, bound.trainable().to_vec()))
}

/// Gradient check of the full classifier loss with respect to every
/// trainable tensor, sampling a few entries of each. With `adapted`
/// the model carries LoRA factors whose zero-initialized half is
/// replaced by random values so both factors receive gradient.
fn classifier_case(adapted: bool, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut model = Model::init(tiny_config(), rng.random())?;
    if adapted {
        let cfg = LoraConfig {
            rank: 2,
            targets: MatrixRole::ALL.to_vec(),
            ..LoraConfig::default()
        };
        lora::inject(&mut model, &cfg, rng.random())?;
        for ad in model.adapters.as_mut().unwrap().adapters.values_mut() {
            ad.a = Tensor::randn(ad.a.shape(), 0.3, rng);
        }
    }
    let n = rng.random_range(1..4);
    let batch: Vec<Vec<usize>> = (0..n).map(|_| random_ids(rng, 40, 6)).collect();
    let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let weights = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];

    let mut tape = Tape::new();
    let (loss, trainable) = classifier_loss(&model, &mut tape, true, &batch, &targets, &weights)?;
    tape.backward(loss)?;

    let mut worst = 0.0f64;
    for (name, var) in trainable {
        let analytic = tape
            .grad(var)
            .cloned()
            .expect("trainable leaf has a gradient");
        let original = tape.value(var).clone();
        let picks: Vec<usize> = (0..4)
            .map(|_| rng.random_range(0..original.len()))
            .collect();
        let mut f = |x: &Tensor| -> Result<f64> {
            let mut m = model.clone();
            for (n, t) in m.trainable_params_mut() {
                if n == name {
                    *t = x.clone();
                }
            }
            let mut t = Tape::new();
            let (l, _) = classifier_loss(&m, &mut t, false, &batch, &targets, &weights)?;
            Ok(t.value(l).data()[0])
        };
        worst = worst.max(max_relative_error(
            &mut f,
            &original,
            &analytic,
            Some(&picks),
        )?);
    }
    Ok(worst)
}

/// `per_op` random instances of every primitive plus `classifier`
/// instances of the full classifier loss.
pub fn gradient_suite(per_op: usize, classifier: usize, seed: u64) -> Result<Vec<GradCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for op in PRIMITIVES {
        for _ in 0..per_op {
            out.push(GradCase {
                op,
                max_rel_error: primitive_case(op, &mut rng)?,
            });
        }
    }
    for i in 0..classifier {
        out.push(GradCase {
            op: "classifier_loss",
            max_rel_error: classifier_case(i % 2 == 0, &mut rng)?,
        });
    }
    Ok(out)
}

/// Invokes the command-line entry point, panicking with the arguments on
/// a non-zero exit code.
pub fn cli(args: &[&str]) {
    let mut argv = vec!["guardlora"];
    argv.extend_from_slice(args);
    let code = guardlora::cli::run(&argv);
    assert_eq!(code, 0, "command failed: {}", argv.join(" "));
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Outcome of the desk-scale pipeline.
#[derive(Debug, Clone)]
pub struct DeskRun {
    pub root: PathBuf,
    pub seconds: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub first_loss: f64,
    pub final_loss: f64,
}

pub const DESK_CONFIG: &str = r#"
[model]
vocab_size = 2048
d_model = 64
n_layers = 2
n_heads = 4
d_ff = 128
max_seq_len = 128
n_classes = 2

[lora]
rank = 8
alpha = 16.0
dropout = 0.1
targets = ["query", "value"]

[pretraining]
learning_rate = 0.001
epochs = 5
batch_size = 8

[training]
learning_rate = 0.001
epochs = 20
batch_size = 8

[data]
train_fraction = 0.8
vocab_size = 2048
"#;

fn metric(jsonl: &str, name: &str) -> f64 {
    jsonl
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .find(|v| v["metric"] == name)
        .and_then(|v| v["value"].as_f64())
        .unwrap_or_else(|| panic!("metric {name} missing"))
}

/// Synthetic corpora on disk, then the full command-line pipeline:
/// preprocess with a seeded split, tokenizer, pretraining, LoRA
/// fine-tuning and evaluation on the held-out part.
pub fn desk_scale_run(root: &Path, seed: u64) -> DeskRun {
    let start = Instant::now();
    std::fs::create_dir_all(root).unwrap();
    let docs = root.join("docs.txt");
    std::fs::write(
        &docs,
        corpus::synthetic::synthetic_documents(50, seed).join("\n") + "\n",
    )
    .unwrap();
    let task = root.join("task.tsv");
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(&task)
        .unwrap();
    w.write_record(["text", "label"]).unwrap();
    for e in corpus::synthetic::keyword_task(1000, seed) {
        w.write_record([e.text, e.label.to_string()]).unwrap();
    }
    w.flush().unwrap();
    let config = root.join("run.toml");
    std::fs::write(&config, format!("seed = {seed}\n{DESK_CONFIG}")).unwrap();

    let dir = |n: &str| root.join(n);
    let (data, tok, base, ft, eval) = (
        dir("data"),
        dir("tokenizer"),
        dir("base"),
        dir("finetune"),
        dir("eval"),
    );
    let c = s(&config);
    cli(&[
        "preprocess",
        "--config",
        c,
        "--tabular",
        s(&task),
        "--split",
        "--out-dir",
        s(&data),
    ]);
    cli(&[
        "train-tokenizer",
        "--config",
        c,
        "--input",
        s(&docs),
        "--out-dir",
        s(&tok),
    ]);
    let tok_file = tok.join("tokenizer.bpe");
    cli(&[
        "pretrain",
        "--config",
        c,
        "--tokenizer",
        s(&tok_file),
        "--corpus",
        s(&docs),
        "--out-dir",
        s(&base),
    ]);
    let base_file = base.join("base.ckpt");
    cli(&[
        "finetune",
        "--config",
        c,
        "--tokenizer",
        s(&tok_file),
        "--base",
        s(&base_file),
        "--train",
        s(&data.join("train.tsv")),
        "--out-dir",
        s(&ft),
    ]);
    cli(&[
        "evaluate",
        "--config",
        c,
        "--tokenizer",
        s(&tok_file),
        "--base",
        s(&base_file),
        "--adapters",
        s(&ft.join("adapters.glad")),
        "--data",
        s(&data.join("test.tsv")),
        "--out-dir",
        s(&eval),
    ]);
    let seconds = start.elapsed().as_secs_f64();

    let metrics = std::fs::read_to_string(eval.join("metrics.jsonl")).unwrap();
    let curve: Vec<serde_json::Value> = std::fs::read_to_string(ft.join("training_curve.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    DeskRun {
        root: root.to_path_buf(),
        seconds,
        accuracy: metric(&metrics, "accuracy"),
        f1: metric(&metrics, "f1"),
        first_loss: curve.first().unwrap()["loss"].as_f64().unwrap(),
        final_loss: curve.last().unwrap()["loss"].as_f64().unwrap(),
    }
}

/// Output files whose bytes must not depend on the run.
pub const DETERMINISTIC_OUTPUTS: [&str; 11] = [
    "data/train.tsv",
    "data/test.tsv",
    "tokenizer/tokenizer.bpe",
    "base/base.ckpt",
    "base/training_curve.jsonl",
    "base/steps.jsonl",
    "finetune/adapters.glad",
    "finetune/training_curve.jsonl",
    "finetune/steps.jsonl",
    "eval/metrics.jsonl",
    "eval/metrics.txt",
];

/// Confusion-free reference: every metric straight from its definition
/// over the raw pairs, in the order accuracy, TPR, FPR, precision,
/// recall, F1, F0.5.
pub fn brute_force_metrics(preds: &[usize], labels: &[usize]) -> [Option<f64>; 7] {
    let count = |p: usize, l: usize| {
        preds
            .iter()
            .zip(labels)
            .filter(|&(&a, &b)| a == p && b == l)
            .count()
    };
    let (tp, tn, fp, fn_) = (count(1, 1), count(0, 0), count(1, 0), count(0, 1));
    let correct = preds.iter().zip(labels).filter(|(a, b)| a == b).count();
    let frac = |a: usize, b: usize| {
        if b == 0 {
            None
        } else {
            Some(a as f64 / b as f64)
        }
    };
    let precision = frac(tp, tp + fp);
    let recall = frac(tp, tp + fn_);
    let f = |beta: f64| match (precision, recall) {
        (Some(p), Some(r)) if beta * beta * p + r > 0.0 => {
            Some((1.0 + beta * beta) * p * r / (beta * beta * p + r))
        }
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    [
        frac(correct, preds.len()),
        recall,
        frac(fp, fp + tn),
        precision,
        recall,
        f(1.0),
        f(0.5),
    ]
}

pub fn report_array(r: &guardlora::metrics::MetricsReport) -> [Option<f64>; 7] {
    [r.accuracy, r.tpr, r.fpr, r.precision, r.recall, r.f1, r.f05]
}

/// `−log softmax(x)[y]` evaluated literally, without log-sum-exp.
pub fn naive_nll(row: &[f64], y: usize) -> f64 {
    let z: f64 = row.iter().map(|v| v.exp()).sum();
    -(row[y].exp() / z).ln()
}

pub const URDU_SAMPLES: [&str; 8] = [
    "آپ کیسے ہیں",
    "تم بہت اچھے ہو",
    "یہ کیا بکواس ہے",
    "شکریہ میرے دوست",
    "بدتمیز انسان",
    "کل ملتے ہیں انشاءاللہ",
    "پاکستان زندہ باد",
    "اردو ایک خوبصورت زبان ہے",
];

/// A vocabulary with merges inside multi-byte Urdu characters as well as
/// ASCII words.
pub fn mixed_vocab() -> guardlora::tokenizer::BpeVocab {
    let mut corpus: Vec<String> = URDU_SAMPLES.iter().map(|s| s.repeat(3)).collect();
    corpus.extend(corpus::synthetic::synthetic_documents(20, 3));
    corpus.push("tum bohat ache ho, kya haal hai bhai".into());
    guardlora::tokenizer::train_bpe(&corpus, 700, 0).unwrap()
}

/// Strings mixing arbitrary Unicode, Urdu sample phrases and ASCII.
pub fn text_strategy() -> impl proptest::strategy::Strategy<Value = String> {
    use proptest::prelude::*;
    let urdu = proptest::sample::select(URDU_SAMPLES.to_vec()).prop_map(String::from);
    let arabic_block = proptest::collection::vec(
        prop_oneof![0x0600u32..0x0700, 0x0750u32..0x0780, 0xFB50u32..0xFDFF],
        0..20,
    )
    .prop_map(|cps| {
        cps.into_iter()
            .filter_map(char::from_u32)
            .collect::<String>()
    });
    let pieces = prop_oneof![
        any::<String>(),
        urdu,
        arabic_block,
        "[a-z ,.!?]{0,30}",
        Just(String::new()),
    ];
    proptest::collection::vec(pieces, 1..4).prop_map(|v| v.concat())
}

/// Small random architecture for adapter-equivalence checks.
pub fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let n_heads = rng.random_range(1..3);
    ModelConfig {
        vocab_size: rng.random_range(5..50),
        d_model: n_heads * 2 * rng.random_range(2..5),
        n_layers: rng.random_range(1..3),
        n_heads,
        d_ff: rng.random_range(8..20),
        max_seq_len: 12,
        n_classes: rng.random_range(2..4),
        ..ModelConfig::default()
    }
}

/// A two-layer model with fresh adapters on three roles, byte-level
/// vocabulary, 40 keyword examples and a schedule of exactly 50 steps.
pub fn toy_setup() -> (Model, BpeVocab, Vec<LabeledExample>, TrainingConfig) {
    let cfg = ModelConfig {
        vocab_size: 260,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 24,
        max_seq_len: 24,
        n_classes: 2,
        ..ModelConfig::default()
    };
    let mut model = Model::init(cfg, 3).unwrap();
    let lora = LoraConfig {
        rank: 2,
        targets: vec![MatrixRole::Query, MatrixRole::Value, MatrixRole::Down],
        ..LoraConfig::default()
    };
    lora::inject(&mut model, &lora, 4).unwrap();
    let train = TrainingConfig {
        learning_rate: 1e-2,
        epochs: 10,
        batch_size: 8,
        seed: 5,
        ..TrainingConfig::default()
    };
    (model, BpeVocab::base(), keyword_task(40, 6), train)
}
