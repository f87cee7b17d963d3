mod common;

use std::path::Path;

use common::{cli, fixture, s};
use guardlora::cli::run;

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&read(p)).unwrap()
}

#[test]
fn stats_on_a_roman_urdu_table() {
    let out = tempfile::tempdir().unwrap();
    cli(&[
        "stats",
        "--tabular",
        s(&fixture("roman_urdu.csv")),
        "--text-column",
        "comment",
        "--positive-label",
        "abusive",
        "--negative-label",
        "neutral",
        "--out-dir",
        s(out.path()),
    ]);
    let stats = json(&out.path().join("stats.json"));
    assert_eq!(stats["total"], 10);
    assert_eq!(stats["positives"], 4);
    assert_eq!(stats["negatives"], 6);
    let manifest = json(&out.path().join("manifest.json"));
    assert_eq!(manifest["command"], "stats");
    let inputs = manifest["inputs"].as_object().unwrap();
    assert_eq!(inputs.len(), 1);
    assert_eq!(inputs.values().next().unwrap().as_str().unwrap().len(), 64);
}

#[test]
fn preprocess_pan12_fixture() {
    let out = tempfile::tempdir().unwrap();
    cli(&[
        "preprocess",
        "--pan12-xml",
        s(&fixture("pan12_sample.xml")),
        "--predators",
        s(&fixture("predators.txt")),
        "--out-dir",
        s(out.path()),
    ]);
    let filter = json(&out.path().join("filter_stats.json"));
    assert_eq!(filter["kept"], 6);
    assert_eq!(filter["removed_author_count"], 4);
    assert_eq!(filter["removed_too_short"], 2);
    let data = guardlora::corpus::load_dataset(&out.path().join("dataset.tsv")).unwrap();
    assert_eq!(data.iter().filter(|e| e.label == 1).count(), 3);
    assert_eq!(json(&out.path().join("stats.json"))["all"]["total"], 6);
}

const TINY: [&str; 12] = [
    "--vocab-size",
    "300",
    "--d-model",
    "16",
    "--n-layers",
    "1",
    "--n-heads",
    "2",
    "--d-ff",
    "24",
    "--max-seq-len",
    "32",
];

struct Workspace {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
}

/// Data, tokenizer and a briefly pretrained tiny base model.
fn prepared() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let docs = root.join("docs.txt");
    std::fs::write(
        &docs,
        guardlora::corpus::synthetic::synthetic_documents(8, 1).join("\n"),
    )
    .unwrap();
    let task = root.join("task.tsv");
    let mut body = String::from("text\tlabel\n");
    for e in guardlora::corpus::synthetic::keyword_task(40, 2) {
        body += &format!("{}\t{}\n", e.text, e.label);
    }
    std::fs::write(&task, body).unwrap();
    cli(&[
        "preprocess",
        "--tabular",
        s(&task),
        "--split",
        "--seed",
        "3",
        "--out-dir",
        s(&root.join("data")),
    ]);
    cli(&[
        "train-tokenizer",
        "--input",
        s(&docs),
        "--vocab-size",
        "290",
        "--out-dir",
        s(&root.join("tok")),
    ]);
    let mut args = vec![
        "pretrain",
        "--seed",
        "3",
        "--tokenizer",
        s(&root.join("tok/tokenizer.bpe")).to_owned().leak(),
        "--corpus",
        s(&docs).to_owned().leak(),
        "--epochs",
        "1",
        "--learning-rate",
        "0.01",
        "--out-dir",
        s(&root.join("base")).to_owned().leak(),
    ];
    args.extend(TINY);
    cli(&args);
    Workspace { _dir: dir, root }
}

fn finetune(ws: &Workspace, out: &str) {
    let r = &ws.root;
    cli(&[
        "finetune",
        "--seed",
        "9",
        "--tokenizer",
        s(&r.join("tok/tokenizer.bpe")),
        "--base",
        s(&r.join("base/base.ckpt")),
        "--train",
        s(&r.join("data/train.tsv")),
        "--rank",
        "2",
        "--targets",
        "query,value",
        "--epochs",
        "2",
        "--learning-rate",
        "0.01",
        "--out-dir",
        s(&r.join(out)),
    ]);
}

#[test]
fn finetune_reruns_are_byte_identical_and_merge_preserves_metrics() {
    let ws = prepared();
    let r = &ws.root;
    finetune(&ws, "ft1");
    finetune(&ws, "ft2");
    for f in ["adapters.glad", "training_curve.jsonl", "steps.jsonl"] {
        assert_eq!(
            std::fs::read(r.join("ft1").join(f)).unwrap(),
            std::fs::read(r.join("ft2").join(f)).unwrap(),
            "{f}"
        );
    }
    let log = read(&r.join("ft1/training_log.jsonl"));
    assert_eq!(log.lines().count(), 2);
    assert!(log.contains("seconds"));

    let tok = r.join("tok/tokenizer.bpe");
    let base = r.join("base/base.ckpt");
    let adapters = r.join("ft1/adapters.glad");
    let test = r.join("data/test.tsv");
    cli(&[
        "evaluate",
        "--tokenizer",
        s(&tok),
        "--base",
        s(&base),
        "--adapters",
        s(&adapters),
        "--data",
        s(&test),
        "--out-dir",
        s(&r.join("eval_adapted")),
    ]);
    cli(&[
        "merge",
        "--base",
        s(&base),
        "--adapters",
        s(&adapters),
        "--out-dir",
        s(&r.join("merged")),
    ]);
    cli(&[
        "evaluate",
        "--tokenizer",
        s(&tok),
        "--base",
        s(&r.join("merged/merged.ckpt")),
        "--data",
        s(&test),
        "--out-dir",
        s(&r.join("eval_merged")),
    ]);
    assert_eq!(
        read(&r.join("eval_adapted/metrics.jsonl")),
        read(&r.join("eval_merged/metrics.jsonl"))
    );
    assert_eq!(
        read(&r.join("eval_adapted/metrics.jsonl")).lines().count(),
        8
    );

    let lines = r.join("lines.txt");
    std::fs::write(&lines, "tum idiot ho\nkya haal hai\n").unwrap();
    cli(&[
        "predict",
        "--tokenizer",
        s(&tok),
        "--base",
        s(&base),
        "--adapters",
        s(&adapters),
        "--input",
        s(&lines),
        "--out-dir",
        s(&r.join("pred")),
    ]);
    let preds = read(&r.join("pred/predictions.jsonl"));
    assert_eq!(preds.lines().count(), 2);
    for l in preds.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        let p: f64 = v["probabilities"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .sum();
        assert!((p - 1.0).abs() < 1e-12);
    }
    let manifest = json(&r.join("pred/manifest.json"));
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 4);
}

#[test]
fn evaluate_with_a_larger_tokenizer_fails() {
    let ws = prepared();
    let r = &ws.root;
    cli(&[
        "train-tokenizer",
        "--input",
        s(&r.join("docs.txt")),
        "--vocab-size",
        "400",
        "--out-dir",
        s(&r.join("big")),
    ]);
    let code = run([
        "guardlora",
        "evaluate",
        "--tokenizer",
        s(&r.join("big/tokenizer.bpe")),
        "--base",
        s(&r.join("base/base.ckpt")),
        "--data",
        s(&r.join("data/test.tsv")),
        "--out-dir",
        s(&r.join("bad")),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn usage_and_input_errors() {
    let out = tempfile::tempdir().unwrap();
    let o = s(out.path());
    assert_eq!(
        run([
            "guardlora",
            "pretrain",
            "--tokenizer",
            "x",
            "--corpus",
            "y",
            "--out-dir",
            o
        ]),
        1
    );
    assert_eq!(
        run([
            "guardlora",
            "stats",
            "--dataset",
            "/no/such/file",
            "--out-dir",
            o
        ]),
        1
    );
    assert_eq!(run(["guardlora", "finetune", "--rank", "many"]), 2);
    assert_eq!(
        run([
            "guardlora",
            "preprocess",
            "--pan12-xml",
            "a.xml",
            "--out-dir",
            o
        ]),
        2
    );
    let cfg = out.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nwidth = 3\n").unwrap();
    assert_eq!(
        run([
            "guardlora",
            "stats",
            "--config",
            s(&cfg),
            "--dataset",
            "x",
            "--out-dir",
            o
        ]),
        1
    );
}
