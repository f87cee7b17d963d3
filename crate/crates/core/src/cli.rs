//! Command-line pipeline: preprocess, train-tokenizer, pretrain, finetune,
//! merge, evaluate, predict and stats.
//!
//! Hyperparameters come from an optional TOML run configuration and are
//! overridden by flags. Every command writes its outputs and a
//! `manifest.json` (resolved configuration, seed, argv and SHA-256 digests
//! of inputs and outputs) under the output directory.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{self, LabeledExample, TabularFormat};
use crate::error::{Error, Result};
use crate::lora::{self, LoraConfig};
use crate::metrics;
use crate::model::{MatrixRole, Model, ModelConfig};
use crate::tokenizer::{self, BpeVocab, DEFAULT_VOCAB_SIZE};
use crate::training::{self, ClassWeights, TrainingConfig, TrainingLog, Truncation};

/// Input paths a run configuration may supply instead of flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub tokenizer: Option<PathBuf>,
    pub base: Option<PathBuf>,
    pub adapters: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

/// Dataset handling shared by several commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_fraction: f64,
    pub vocab_size: usize,
    pub text_column: String,
    pub label_column: String,
    pub positive_label: String,
    pub negative_label: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            vocab_size: DEFAULT_VOCAB_SIZE,
            text_column: "text".into(),
            label_column: "label".into(),
            positive_label: "1".into(),
            negative_label: "0".into(),
        }
    }
}

/// Everything a run needs besides its positional inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub lora: LoraConfig,
    pub pretraining: TrainingConfig,
    pub training: TrainingConfig,
    pub data: DataConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("run configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| {
            Error::config("a seed is required: pass --seed or set seed in the run configuration")
        })
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "guardlora",
    version,
    about = "LoRA fine-tuning pipeline for abusive and predatory text classification"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn PAN12 XML or a delimited table into processed dataset files
    Preprocess(PreprocessArgs),
    /// Learn a byte-level BPE merge table
    TrainTokenizer(TrainTokenizerArgs),
    /// Self-supervised next-token training of a fresh base model
    Pretrain(PretrainArgs),
    /// Attach LoRA adapters to a base model and train them on labeled text
    Finetune(FinetuneArgs),
    /// Fold adapters into the base weights
    Merge(MergeArgs),
    /// Score a labeled dataset and report metrics
    Evaluate(EvaluateArgs),
    /// Classify raw text lines
    Predict(PredictArgs),
    /// Print dataset statistics
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; flags take precedence over its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory that receives every output of this run
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Seeds initialization, adapter init, splitting, shuffling and dropout
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ModelFlags {
    /// Embedding rows; must cover the tokenizer vocabulary
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Hidden width
    #[arg(long)]
    d_model: Option<usize>,
    /// Decoder blocks
    #[arg(long)]
    n_layers: Option<usize>,
    /// Attention heads; must divide the hidden width
    #[arg(long)]
    n_heads: Option<usize>,
    /// Feed-forward inner width
    #[arg(long)]
    d_ff: Option<usize>,
    /// Longest token sequence the model accepts
    #[arg(long)]
    max_seq_len: Option<usize>,
    /// Classifier outputs
    #[arg(long)]
    n_classes: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WeightsArg {
    Uniform,
    InverseFrequency,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TruncationArg {
    Tail,
    Head,
}

impl From<TruncationArg> for Truncation {
    fn from(t: TruncationArg) -> Self {
        match t {
            TruncationArg::Tail => Truncation::Tail,
            TruncationArg::Head => Truncation::Head,
        }
    }
}

#[derive(Args, Debug)]
struct TrainFlags {
    /// Passes over the training data
    #[arg(long)]
    epochs: Option<usize>,
    /// AdamW step size
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Examples per optimizer step
    #[arg(long)]
    batch_size: Option<usize>,
    /// Decoupled AdamW weight decay
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Per-class loss weighting
    #[arg(long, value_enum)]
    class_weights: Option<WeightsArg>,
    /// Which end of an over-long text survives
    /// Which end of an over-long text survives
    #[arg(long, value_enum)]
    truncation: Option<TruncationArg>,
}

#[derive(Args, Debug)]
struct LoraFlags {
    /// Inner dimension r of each adapter pair
    #[arg(long)]
    rank: Option<usize>,
    /// Adapter scaling numerator; the update is scaled by alpha / rank
    #[arg(long)]
    alpha: Option<f64>,
    /// Dropout probability on adapter inputs during training
    #[arg(long)]
    lora_dropout: Option<f64>,
    /// Comma-separated matrix roles, e.g. `query,value`
    #[arg(long)]
    targets: Option<String>,
}

#[derive(Args, Debug)]
struct TabularFlags {
    /// Header of the text column
    #[arg(long)]
    text_column: Option<String>,
    /// Header of the label column
    #[arg(long)]
    label_column: Option<String>,
    /// Label value meaning class 1
    #[arg(long)]
    positive_label: Option<String>,
    /// Label value meaning class 0
    #[arg(long)]
    negative_label: Option<String>,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[command(flatten)]
    common: Common,
    /// PAN12 conversations XML file
    #[arg(long, requires = "predators", conflicts_with = "tabular")]
    pan12_xml: Option<PathBuf>,
    /// Predator author ids, one per line
    #[arg(long)]
    predators: Option<PathBuf>,
    /// Delimited table with a header row (`.tsv` means tab-separated)
    #[arg(long)]
    tabular: Option<PathBuf>,
    #[command(flatten)]
    columns: TabularFlags,
    /// Also write a seeded train/test split
    #[arg(long)]
    split: bool,
    /// Share of examples in the training part
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainTokenizerArgs {
    #[command(flatten)]
    common: Common,
    /// Plain-text files, one document per line
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Target vocabulary size, padding token included
    #[arg(long)]
    vocab_size: Option<usize>,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    /// Tokenizer file from train-tokenizer
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Plain-text corpus, one document per line
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[command(flatten)]
    common: Common,
    /// Tokenizer file from train-tokenizer
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Base checkpoint
    #[arg(long)]
    base: Option<PathBuf>,
    /// Processed training dataset
    #[arg(long)]
    train: Option<PathBuf>,
    #[command(flatten)]
    lora: LoraFlags,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args, Debug)]
struct MergeArgs {
    #[command(flatten)]
    common: Common,
    /// Base checkpoint
    #[arg(long)]
    base: Option<PathBuf>,
    /// Adapter file from finetune
    #[arg(long)]
    adapters: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ModelInputs {
    /// Tokenizer file from train-tokenizer
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Base or merged checkpoint
    #[arg(long)]
    base: Option<PathBuf>,
    /// Adapter file; omit for a merged or un-adapted checkpoint
    #[arg(long)]
    adapters: Option<PathBuf>,
    /// Which end of an over-long text survives
    #[arg(long, value_enum)]
    truncation: Option<TruncationArg>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: ModelInputs,
    /// Processed labeled dataset
    #[arg(long)]
    data: Option<PathBuf>,
    /// Decimal places in the printed table
    #[arg(long, default_value_t = 2)]
    decimals: usize,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: ModelInputs,
    /// Text file, one input per line
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[command(flatten)]
    common: Common,
    /// Processed dataset file
    #[arg(long, conflicts_with = "tabular")]
    dataset: Option<PathBuf>,
    /// Delimited table with a header row
    #[arg(long)]
    tabular: Option<PathBuf>,
    #[command(flatten)]
    columns: TabularFlags,
}

/// Parses `argv`, runs the command and returns the process exit code:
/// 0 on success, 2 for usage errors, 1 for every other failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let argv: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match dispatch(cli.command, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Inputs, outputs and configuration of one run.
struct Run {
    command: &'static str,
    config: RunConfig,
    out_dir: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(command: &'static str, common: &Common) -> Result<Self> {
        let mut config = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = common.seed {
            config.seed = Some(s);
        }
        if let Some(d) = &common.out_dir {
            config.out_dir = Some(d.clone());
        }
        let out_dir = config.out_dir.clone().ok_or_else(|| {
            Error::config("an output directory is required: pass --out-dir or set out_dir")
        })?;
        std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        let mut inputs = Vec::new();
        if let Some(p) = &common.config {
            inputs.push(p.clone());
        }
        Ok(Self {
            command,
            config,
            out_dir,
            inputs,
            outputs: Vec::new(),
        })
    }

    /// Resolves a required input from a flag or the `[paths]` table and
    /// checks that it exists.
    fn input(
        &mut self,
        flag: &Option<PathBuf>,
        from_config: Option<PathBuf>,
        name: &str,
    ) -> Result<PathBuf> {
        let path = flag.clone().or(from_config).ok_or_else(|| {
            Error::config(format!("missing input: pass --{name} or set paths.{name}"))
        })?;
        self.register_input(&path)?;
        Ok(path)
    }

    fn register_input(&mut self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::config(format!(
                "input {} does not exist",
                path.display()
            )));
        }
        self.inputs.push(path.to_path_buf());
        Ok(())
    }

    fn out(&mut self, name: &str) -> PathBuf {
        let p = self.out_dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.out(name);
        std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
        self.write(name, &text)
    }

    fn finish(mut self, argv: &[String]) -> Result<()> {
        let digest = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
                .collect()
        };
        let manifest = serde_json::json!({
            "tool": "guardlora",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "argv": argv,
            "seed": self.config.seed,
            "config": self.config,
            "inputs": digest(&self.inputs)?,
            "outputs": digest(&self.outputs)?,
        });
        let path = self.out_dir.join("manifest.json");
        self.outputs.clear();
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::with_capacity(64);
    for b in Sha256::digest(&bytes) {
        write!(out, "{b:02x}").expect("writing to a String");
    }
    Ok(out)
}

fn apply_model_flags(c: &mut ModelConfig, f: &ModelFlags) {
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut c.vocab_size, f.vocab_size);
    set(&mut c.d_model, f.d_model);
    set(&mut c.n_layers, f.n_layers);
    set(&mut c.n_heads, f.n_heads);
    set(&mut c.d_ff, f.d_ff);
    set(&mut c.max_seq_len, f.max_seq_len);
    set(&mut c.n_classes, f.n_classes);
}

fn apply_train_flags(c: &mut TrainingConfig, f: &TrainFlags, seed: u64) {
    c.seed = seed;
    if let Some(v) = f.epochs {
        c.epochs = v;
    }
    if let Some(v) = f.learning_rate {
        c.learning_rate = v;
    }
    if let Some(v) = f.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = f.weight_decay {
        c.weight_decay = v;
    }
    if let Some(w) = f.class_weights {
        c.class_weights = match w {
            WeightsArg::Uniform => ClassWeights::Uniform,
            WeightsArg::InverseFrequency => ClassWeights::InverseFrequency,
        };
    }
    if let Some(t) = f.truncation {
        c.truncation = t.into();
    }
}

fn apply_lora_flags(c: &mut LoraConfig, f: &LoraFlags) -> Result<()> {
    if let Some(v) = f.rank {
        c.rank = v;
    }
    if let Some(v) = f.alpha {
        c.alpha = v;
    }
    if let Some(v) = f.lora_dropout {
        c.dropout = v;
    }
    if let Some(t) = &f.targets {
        c.targets = t
            .split(',')
            .map(str::parse::<MatrixRole>)
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(())
}

fn tabular_format(data: &DataConfig, f: &TabularFlags, path: &Path) -> TabularFormat {
    TabularFormat {
        text_column: f
            .text_column
            .clone()
            .unwrap_or_else(|| data.text_column.clone()),
        label_column: f
            .label_column
            .clone()
            .unwrap_or_else(|| data.label_column.clone()),
        positive_label: f
            .positive_label
            .clone()
            .unwrap_or_else(|| data.positive_label.clone()),
        negative_label: f
            .negative_label
            .clone()
            .unwrap_or_else(|| data.negative_label.clone()),
        delimiter: TabularFormat::delimiter_for(path),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(String::from).collect())
}

fn stats_table(s: &corpus::DatasetStats) -> String {
    let imbalance = s
        .imbalance_pct
        .map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}%"));
    format!(
        "total      {}\npositives  {}\nnegatives  {}\nmin_len    {}\nmax_len    {}\nimbalance  {}\n",
        s.total, s.positives, s.negatives, s.min_len, s.max_len, imbalance
    )
}

fn write_training_outputs(run: &mut Run, log: &TrainingLog) -> Result<()> {
    run.write("training_log.jsonl", &log.epochs_jsonl())?;
    run.write("training_curve.jsonl", &log.curve_jsonl())?;
    run.write("steps.jsonl", &log.steps_jsonl())
}

fn load_model(run: &mut Run, inputs: &ModelInputs) -> Result<(BpeVocab, Model, Truncation)> {
    let tok = run.input(
        &inputs.tokenizer,
        run.config.paths.tokenizer.clone(),
        "tokenizer",
    )?;
    let base = run.input(&inputs.base, run.config.paths.base.clone(), "base")?;
    let vocab = BpeVocab::load(&tok)?;
    let mut model = Model::load_checkpoint(&base)?;
    let adapters = inputs
        .adapters
        .clone()
        .or(run.config.paths.adapters.clone());
    if let Some(a) = adapters {
        run.register_input(&a)?;
        lora::load_adapters(&mut model, &a)?;
    }
    training::check_vocab(&model, &vocab)?;
    let truncation = inputs
        .truncation
        .map(Truncation::from)
        .unwrap_or(run.config.training.truncation);
    Ok((vocab, model, truncation))
}

fn dispatch(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Preprocess(a) => preprocess(a, argv),
        Command::TrainTokenizer(a) => train_tokenizer(a, argv),
        Command::Pretrain(a) => pretrain(a, argv),
        Command::Finetune(a) => finetune(a, argv),
        Command::Merge(a) => merge(a, argv),
        Command::Evaluate(a) => evaluate(a, argv),
        Command::Predict(a) => predict(a, argv),
        Command::Stats(a) => stats(a, argv),
    }
}

fn preprocess(a: PreprocessArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("preprocess", &a.common)?;
    let examples: Vec<LabeledExample> = if let Some(xml) = &a.pan12_xml {
        run.register_input(xml)?;
        let preds = a.predators.as_ref().expect("clap enforces --predators");
        run.register_input(preds)?;
        let convs = corpus::parse_pan12_xml(xml)?;
        let (kept, filter) = corpus::filter_conversations(&convs);
        run.write_json("filter_stats.json", &filter)?;
        corpus::label_conversations(&kept, &corpus::load_predator_ids(preds)?)
    } else if let Some(table) = &a.tabular {
        run.register_input(table)?;
        let format = tabular_format(&run.config.data, &a.columns, table);
        corpus::load_tabular(table, &format)?
    } else {
        return Err(Error::config("preprocess needs --pan12-xml or --tabular"));
    };
    let dataset = run.out("dataset.tsv");
    corpus::save_dataset(&dataset, &examples)?;
    let mut stats = BTreeMap::from([("all", corpus::dataset_stats(&examples))]);
    if a.split {
        let seed = run.config.require_seed()?;
        let fraction = a.train_fraction.unwrap_or(run.config.data.train_fraction);
        run.config.data.train_fraction = fraction;
        let (train, test) = corpus::split_dataset(&examples, fraction, seed)?;
        let p = run.out("train.tsv");
        corpus::save_dataset(&p, &train.examples)?;
        let p = run.out("test.tsv");
        corpus::save_dataset(&p, &test.examples)?;
        stats.insert("train", train.stats());
        stats.insert("test", test.stats());
    }
    run.write_json("stats.json", &stats)?;
    print!("{}", stats_table(&stats["all"]));
    run.finish(argv)
}

fn train_tokenizer(a: TrainTokenizerArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("train-tokenizer", &a.common)?;
    let mut docs = Vec::new();
    for p in &a.inputs {
        run.register_input(p)?;
        docs.extend(read_lines(p)?.into_iter().filter(|l| !l.is_empty()));
    }
    let size = a.vocab_size.unwrap_or(run.config.data.vocab_size);
    run.config.data.vocab_size = size;
    let vocab = tokenizer::train_bpe(&docs, size, run.config.seed.unwrap_or(0))?;
    let path = run.out("tokenizer.bpe");
    vocab.save(&path)?;
    println!(
        "learned {} merges, vocabulary of {} tokens",
        vocab.merges().len(),
        vocab.len()
    );
    run.finish(argv)
}

fn pretrain(a: PretrainArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("pretrain", &a.common)?;
    let seed = run.config.require_seed()?;
    let tok = run.input(
        &a.tokenizer,
        run.config.paths.tokenizer.clone(),
        "tokenizer",
    )?;
    let corpus_path = run.input(&a.corpus, run.config.paths.corpus.clone(), "corpus")?;
    apply_model_flags(&mut run.config.model, &a.model);
    apply_train_flags(&mut run.config.pretraining, &a.train, seed);
    let vocab = BpeVocab::load(&tok)?;
    let docs: Vec<String> = read_lines(&corpus_path)?
        .into_iter()
        .filter(|l| !l.is_empty())
        .collect();
    let mut model = Model::init(run.config.model.clone(), seed)?;
    let log = training::pretrain_lm(&mut model, &vocab, &docs, &run.config.pretraining)?;
    let path = run.out("base.ckpt");
    model.save_checkpoint(&path)?;
    write_training_outputs(&mut run, &log)?;
    run.finish(argv)
}

fn finetune(a: FinetuneArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("finetune", &a.common)?;
    let seed = run.config.require_seed()?;
    let tok = run.input(
        &a.tokenizer,
        run.config.paths.tokenizer.clone(),
        "tokenizer",
    )?;
    let base = run.input(&a.base, run.config.paths.base.clone(), "base")?;
    let train = run.input(&a.train, run.config.paths.train.clone(), "train")?;
    apply_lora_flags(&mut run.config.lora, &a.lora)?;
    apply_train_flags(&mut run.config.training, &a.flags, seed);
    let vocab = BpeVocab::load(&tok)?;
    let mut model = Model::load_checkpoint(&base)?;
    run.config.model = model.config.clone();
    let examples = corpus::load_dataset(&train)?;
    lora::inject(&mut model, &run.config.lora, seed)?;
    let log = training::finetune_classifier(&mut model, &vocab, &examples, &run.config.training)?;
    let path = run.out("adapters.glad");
    lora::save_adapters(&model, &path)?;
    write_training_outputs(&mut run, &log)?;
    run.finish(argv)
}

fn merge(a: MergeArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("merge", &a.common)?;
    let base = run.input(&a.base, run.config.paths.base.clone(), "base")?;
    let adapters = run.input(&a.adapters, run.config.paths.adapters.clone(), "adapters")?;
    let mut model = Model::load_checkpoint(&base)?;
    lora::load_adapters(&mut model, &adapters)?;
    model.merge_adapters()?;
    run.config.model = model.config.clone();
    let path = run.out("merged.ckpt");
    model.save_checkpoint(&path)?;
    run.finish(argv)
}

fn evaluate(a: EvaluateArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("evaluate", &a.common)?;
    let (vocab, model, truncation) = load_model(&mut run, &a.inputs)?;
    let data = run.input(&a.data, run.config.paths.test.clone(), "data")?;
    let examples = corpus::load_dataset(&data)?;
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let preds = training::predict_labels(&model, &vocab, &examples, truncation)?;
    let cm = metrics::confusion(&preds, &labels)?;
    let report = metrics::report(&cm)?;
    let table = report.to_table(&cm, a.decimals);
    run.write("metrics.jsonl", &report.to_jsonl(&cm))?;
    run.write("metrics.txt", &table)?;
    print!("{table}");
    run.finish(argv)
}

fn predict(a: PredictArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("predict", &a.common)?;
    let (vocab, model, truncation) = load_model(&mut run, &a.inputs)?;
    run.register_input(&a.input)?;
    let lines = read_lines(&a.input)?;
    let texts: Vec<&str> = lines.iter().map(String::as_str).collect();
    let preds = training::predict(&model, &vocab, &texts, truncation)?;
    let mut out = String::new();
    for (text, p) in texts.iter().zip(&preds) {
        let line = serde_json::json!({
            "label": p.label,
            "probabilities": p.probabilities,
            "text": text,
        });
        writeln!(out, "{line}").expect("writing to a String");
    }
    run.write("predictions.jsonl", &out)?;
    print!("{out}");
    run.finish(argv)
}

fn stats(a: StatsArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("stats", &a.common)?;
    let examples = if let Some(d) = &a.dataset {
        run.register_input(d)?;
        corpus::load_dataset(d)?
    } else if let Some(t) = &a.tabular {
        run.register_input(t)?;
        let format = tabular_format(&run.config.data, &a.columns, t);
        corpus::load_tabular(t, &format)?
    } else {
        return Err(Error::config("stats needs --dataset or --tabular"));
    };
    let s = corpus::dataset_stats(&examples);
    run.write_json("stats.json", &s)?;
    print!("{}", stats_table(&s));
    run.finish(argv)
}
