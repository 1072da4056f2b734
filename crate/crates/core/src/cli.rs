//! Command-line entry point.
//!
//! Every artifact of a run lands in one `--out` directory. Flags override
//! values from the `--config` file, which in turn overrides built-in defaults.
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{run_augmentation, AugmentError, AugmentationJob, ProviderChoice};
use crate::data::{
    corpus_stats, load_corpus, select_training_data, split_dev, Corpus, DataError, LabelSet, LabeledText,
};
use crate::metrics::{parse_predictions, render_report, score, MetricsError};
use crate::model::{EmotionModel, ModelConfig, ModelError};
use crate::tokenizer::{encode, EncodedInput, VocabError, Vocabulary, DEFAULT_MAX_LEN};
use crate::train::{
    fine_tune_observed, pretrain_mlm_observed, EpochLog, TrainConfig, TrainError, TrainItem,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

const DEFAULT_OUT: &str = "out";

#[derive(Debug, Parser)]
#[command(name = "emoclf", version, about = "Utterance-level emotion classification with a small transformer encoder")]
pub struct Cli {
    /// JSON run configuration
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,
    /// Seed for initialization, shuffling, dropout and masking
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory for all artifacts
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select, tokenize and encode training data
    Prepare(PrepareArgs),
    /// Back-translate a corpus through pivot languages
    Augment(AugmentArgs),
    /// Masked-LM pretraining on unlabeled utterances
    Pretrain(PretrainArgs),
    /// Fine-tune the classifier on a prepared file
    Train(TrainArgs),
    /// Score predictions and print the report table
    Eval(EvalArgs),
    /// Classify one utterance
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Back-translated copies of the corpus, aligned dialogue by dialogue
    #[arg(long)]
    pub augmented: Vec<PathBuf>,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Hold out the trailing dialogues as dev.jsonl
    #[arg(long)]
    pub dev_split: bool,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Job file; the flags below override its fields
    #[arg(long)]
    pub job: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long = "pivot")]
    pub pivots: Vec<String>,
    /// Tab-separated translation table; without it text is passed through
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    /// Corpus files whose utterances (all labels) are used as text
    #[arg(long)]
    pub corpus: Vec<PathBuf>,
    /// Plain-text files, one utterance per line
    #[arg(long)]
    pub text: Vec<PathBuf>,
    /// Continue from these weights instead of a fresh model
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub mask_prob: Option<f64>,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared JSON-lines file
    #[arg(long)]
    pub data: PathBuf,
    /// Needed for a fresh model, to size the embeddings
    #[arg(long, required_unless_present = "init")]
    pub vocab: Option<PathBuf>,
    /// Start from these weights, e.g. a pretrained checkpoint
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["predictions", "checkpoint"])))]
pub struct EvalArgs {
    /// JSON-lines of {gold, pred} label names
    #[arg(long, conflicts_with_all = ["checkpoint", "data"])]
    pub predictions: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub checkpoint: Option<PathBuf>,
    /// Prepared JSON-lines file with gold labels
    #[arg(long, requires = "checkpoint")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    pub text: String,
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self::Input(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) => EXIT_INPUT,
            Self::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Input(m) | Self::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

macro_rules! input_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::Input(e.to_string())
            }
        }
    )*};
}

input_error!(DataError, VocabError, ModelError, MetricsError, AugmentError);

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numerical() {
            Self::Numerical(e.to_string())
        } else {
            Self::Input(e.to_string())
        }
    }
}

/// Architecture settings for a fresh model; vocabulary size and label count
/// come from the vocabulary file and label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    pub intermediate_size: usize,
    pub max_position: usize,
    pub dropout_prob: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let desk = ModelConfig::desk(1);
        Self {
            num_layers: desk.num_layers,
            num_heads: desk.num_heads,
            hidden_size: desk.hidden_size,
            intermediate_size: desk.intermediate_size,
            max_position: desk.max_position,
            dropout_prob: desk.dropout_prob,
        }
    }
}

impl ArchConfig {
    pub fn model_config(&self, vocab_size: usize, num_labels: usize) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            hidden_size: self.hidden_size,
            intermediate_size: self.intermediate_size,
            vocab_size,
            max_position: self.max_position,
            num_labels,
            dropout_prob: self.dropout_prob,
        }
    }
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub max_len: usize,
    pub labels: Vec<String>,
    pub model: ArchConfig,
    pub train: TrainConfig,
    pub pretrain: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_len: DEFAULT_MAX_LEN,
            labels: LabelSet::DEFAULT.iter().map(|s| s.to_string()).collect(),
            model: ArchConfig::default(),
            train: TrainConfig::default(),
            pretrain: TrainConfig::pretraining(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    pub fn label_set(&self) -> Result<LabelSet, CliError> {
        if self.labels.is_empty() {
            return Err(CliError::input("labels must not be empty"));
        }
        let names: Vec<&str> = self.labels.iter().map(String::as_str).collect();
        Ok(LabelSet::new(&names))
    }
}

/// One line of a prepared dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedRecord {
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub label_id: usize,
    pub source: String,
}

impl PreparedRecord {
    pub fn train_item(&self) -> TrainItem {
        TrainItem {
            input: EncodedInput::from_ids(self.token_ids.clone(), self.attention_mask.clone()),
            label: self.label_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Written before the first optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub started_unix: u64,
    pub config: RunConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub inputs: Vec<InputDigest>,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn digest(path: &Path) -> Result<InputDigest, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::input(format!("writing output: {e}")))
}

pub fn read_prepared(path: &Path) -> Result<Vec<PreparedRecord>, CliError> {
    let text = read_text(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PreparedRecord = serde_json::from_str(line)
            .map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if record.token_ids.len() != record.attention_mask.len() {
            return Err(CliError::input(format!(
                "{}:{}: token_ids and attention_mask differ in length",
                path.display(),
                i + 1
            )));
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(CliError::input(format!("{}: no records", path.display())));
    }
    Ok(records)
}

pub fn write_prepared(path: &Path, records: &[PreparedRecord]) -> Result<(), CliError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    write_file(path, text)
}

struct Context {
    config: RunConfig,
    seed: u64,
    out_dir: PathBuf,
}

impl Context {
    fn from_cli(cli: &Cli) -> Result<Self, CliError> {
        let mut config = match &cli.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        let seed = config.seed;
        config.train.seed = seed;
        config.pretrain.seed = seed;
        Ok(Self {
            config,
            seed,
            out_dir: cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        })
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let ctx = Context::from_cli(cli)?;
    match &cli.command {
        Command::Prepare(args) => cmd_prepare(&ctx, args, out),
        Command::Augment(args) => cmd_augment(&ctx, cli.out.is_some(), args, out),
        Command::Pretrain(args) => cmd_pretrain(&ctx, args, out),
        Command::Train(args) => cmd_train(&ctx, args, out),
        Command::Eval(args) => cmd_eval(&ctx, cli.out.is_some(), args, out),
        Command::Predict(args) => cmd_predict(&ctx, args, out),
    }
}

fn encode_items(texts: &[LabeledText], vocab: &Vocabulary, max_len: usize) -> Vec<PreparedRecord> {
    texts
        .iter()
        .map(|t| {
            let e = encode(&t.text, vocab, max_len);
            PreparedRecord {
                token_ids: e.token_ids,
                attention_mask: e.attention_mask,
                label_id: t.label,
                source: t.source.to_string(),
            }
        })
        .collect()
}

fn histogram(records: &[PreparedRecord], labels: &LabelSet) -> String {
    let mut original = vec![0usize; labels.len()];
    let mut augmented = vec![0usize; labels.len()];
    for r in records {
        let bucket = if r.source == "original" {
            &mut original
        } else {
            &mut augmented
        };
        bucket[r.label_id] += 1;
    }
    let mut s = format!("{:<16}", "");
    for name in labels.names() {
        let _ = write!(s, "{name:>10}");
    }
    let _ = writeln!(s, "{:>10}", "total");
    for (row, counts) in [("original", &original), ("augmented", &augmented)] {
        let _ = write!(s, "{row:<16}");
        for c in counts.iter() {
            let _ = write!(s, "{c:>10}");
        }
        let _ = writeln!(s, "{:>10}", counts.iter().sum::<usize>());
    }
    s
}

fn cmd_prepare(ctx: &Context, args: &PrepareArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let labels = ctx.config.label_set()?;
    let vocab = Vocabulary::load(&args.vocab)?;
    let max_len = args.max_len.unwrap_or(ctx.config.max_len);
    if max_len < 3 {
        return Err(CliError::input(format!("max_len must be at least 3, got {max_len}")));
    }
    let original = load_corpus(&args.corpus)?;
    let augmented = args
        .augmented
        .iter()
        .map(load_corpus)
        .collect::<Result<Vec<Corpus>, _>>()?;

    emit(out, &corpus_stats(&original, Some(&vocab), &labels).render())?;
    let (train_orig, dev_orig, train_aug) = if args.dev_split {
        let (train, dev) = split_dev(&original);
        let aug = augmented.iter().map(|c| split_dev(c).0).collect::<Vec<_>>();
        (train, Some(dev), aug)
    } else {
        (original, None, augmented)
    };
    let train_texts = select_training_data(&train_orig, &train_aug, &labels)?;
    let train = encode_items(&train_texts, &vocab, max_len);
    create_dir(&ctx.out_dir)?;
    let train_path = ctx.out_dir.join("train.jsonl");
    write_prepared(&train_path, &train)?;
    emit(out, &format!("\n{} items -> {}\n", train.len(), train_path.display()))?;
    emit(out, &histogram(&train, &labels))?;
    if let Some(dev_orig) = dev_orig {
        let dev_texts = select_training_data(&dev_orig, &[], &labels)?;
        let dev = encode_items(&dev_texts, &vocab, max_len);
        let dev_path = ctx.out_dir.join("dev.jsonl");
        write_prepared(&dev_path, &dev)?;
        emit(
            out,
            &format!("{} dev items ({} dialogues) -> {}\n", dev.len(), dev_orig.dialogues.len(), dev_path.display()),
        )?;
    }
    Ok(())
}

fn cmd_augment(ctx: &Context, out_given: bool, args: &AugmentArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut job = match &args.job {
        Some(path) => AugmentationJob::load(path)?,
        None => {
            let input = args
                .corpus
                .clone()
                .ok_or_else(|| CliError::input("augment needs --job or --corpus"))?;
            AugmentationJob {
                input,
                pivots: Vec::new(),
                provider: ProviderChoice::Identity,
                output_dir: ctx.out_dir.clone(),
                cache: None,
            }
        }
    };
    if let Some(corpus) = &args.corpus {
        job.input = corpus.clone();
    }
    if !args.pivots.is_empty() {
        job.pivots = args.pivots.clone();
    }
    if let Some(table) = &args.table {
        job.provider = ProviderChoice::Table { path: table.clone() };
    }
    if args.cache.is_some() {
        job.cache = args.cache.clone();
    }
    if out_given {
        job.output_dir = ctx.out_dir.clone();
    }
    job.validate()?;
    let provider = job.provider.build()?;
    let report = run_augmentation(&job, provider.as_ref())?;
    for p in &report.pivots {
        emit(
            out,
            &format!(
                "{}: {} translated, {} failed -> {}\n",
                p.pivot,
                p.successes,
                p.failures.len(),
                p.output.display()
            ),
        )?;
    }
    Ok(())
}

fn apply_optim(config: &mut TrainConfig, args: &OptimArgs) {
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if args.clip_norm.is_some() {
        config.clip_norm = args.clip_norm;
    }
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn log_line(entry: &EpochLog) -> String {
    serde_json::to_string(entry).expect("log serializes")
}

fn load_or_init(
    ctx: &Context,
    init: Option<&Path>,
    vocab_size: Option<usize>,
    labels: &LabelSet,
) -> Result<EmotionModel, CliError> {
    match init {
        Some(path) => {
            let model = EmotionModel::load(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            if let Some(v) = vocab_size {
                if v != model.config.vocab_size {
                    return Err(CliError::input(format!(
                        "vocabulary has {v} tokens but {} was trained with {}",
                        path.display(),
                        model.config.vocab_size
                    )));
                }
            }
            if model.config.num_labels != labels.len() {
                return Err(CliError::input(format!(
                    "{} has {} labels, expected {}",
                    path.display(),
                    model.config.num_labels,
                    labels.len()
                )));
            }
            Ok(model)
        }
        None => {
            let vocab_size = vocab_size.ok_or_else(|| CliError::input("a vocabulary is required for a fresh model"))?;
            let config = ctx.config.model.model_config(vocab_size, labels.len());
            Ok(EmotionModel::new(config, ctx.seed)?)
        }
    }
}

/// Runs a training loop, streaming epoch records to `log_path`.
fn with_epoch_log<F>(log_path: &Path, train: F) -> Result<crate::train::TrainOutcome, CliError>
where
    F: FnOnce(&mut dyn FnMut(&EpochLog)) -> Result<crate::train::TrainOutcome, TrainError>,
{
    let mut file = std::fs::File::create(log_path).map_err(|e| CliError::input(format!("{}: {e}", log_path.display())))?;
    let mut io_error = None;
    let result = train(&mut |entry: &EpochLog| {
        let line = log_line(entry);
        eprintln!("{line}");
        if let Err(e) = writeln!(file, "{line}") {
            io_error.get_or_insert(e);
        }
    });
    if let Some(e) = io_error {
        return Err(CliError::input(format!("{}: {e}", log_path.display())));
    }
    Ok(result?)
}

fn cmd_pretrain(ctx: &Context, args: &PretrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let labels = ctx.config.label_set()?;
    let vocab = Vocabulary::load(&args.vocab)?;
    let mut config = ctx.config.pretrain.clone();
    apply_optim(&mut config, &args.optim);
    if let Some(p) = args.mask_prob {
        config.mask_prob = p;
    }
    config.validate()?;
    let model = load_or_init(ctx, args.init.as_deref(), Some(vocab.len()), &labels)?;
    let max_len = ctx.config.max_len.min(model.config.max_position);

    let mut texts = Vec::new();
    let mut inputs = vec![digest(&args.vocab)?];
    for path in &args.corpus {
        texts.extend(load_corpus(path)?.records().map(|r| r.utterance.clone()));
        inputs.push(digest(path)?);
    }
    for path in &args.text {
        texts.extend(read_text(path)?.lines().map(str::to_string));
        inputs.push(digest(path)?);
    }
    texts.retain(|t| !t.trim().is_empty());
    if texts.is_empty() {
        return Err(CliError::input("pretrain needs at least one --corpus or --text with content"));
    }
    if let Some(init) = &args.init {
        inputs.push(digest(init)?);
    }
    let encoded: Vec<EncodedInput> = texts.iter().map(|t| encode(t, &vocab, max_len)).collect();

    create_dir(&ctx.out_dir)?;
    let ckpt = ctx.out_dir.join("pretrained.ckpt");
    config.checkpoint = Some(ckpt.clone());
    write_manifest(ctx, "pretrain", &model.config, &config, inputs)?;
    let outcome = with_epoch_log(&ctx.out_dir.join("pretrain_epochs.jsonl"), |cb| {
        pretrain_mlm_observed(model, &encoded, &vocab, &config, cb)
    })?;
    emit(
        out,
        &format!("pretrained {} steps on {} texts -> {}\n", outcome.steps, encoded.len(), ckpt.display()),
    )
}

fn write_manifest(
    ctx: &Context,
    command: &str,
    model: &ModelConfig,
    train: &TrainConfig,
    inputs: Vec<InputDigest>,
) -> Result<(), CliError> {
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed: ctx.seed,
        started_unix: now_unix(),
        config: ctx.config.clone(),
        model: model.clone(),
        train: train.clone(),
        inputs,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&ctx.out_dir.join("manifest.json"), json + "\n")
}

fn cmd_train(ctx: &Context, args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let labels = ctx.config.label_set()?;
    let mut config = ctx.config.train.clone();
    apply_optim(&mut config, &args.optim);
    config.validate()?;
    let vocab = args.vocab.as_deref().map(Vocabulary::load).transpose()?;
    let model = load_or_init(ctx, args.init.as_deref(), vocab.as_ref().map(Vocabulary::len), &labels)?;

    let records = read_prepared(&args.data)?;
    let items: Vec<TrainItem> = records.iter().map(PreparedRecord::train_item).collect();
    let mut inputs = vec![digest(&args.data)?];
    for p in [&args.vocab, &args.init].into_iter().flatten() {
        inputs.push(digest(p)?);
    }

    create_dir(&ctx.out_dir)?;
    let ckpt = ctx.out_dir.join("model.ckpt");
    config.checkpoint = Some(ckpt.clone());
    write_manifest(ctx, "train", &model.config, &config, inputs)?;
    let outcome = with_epoch_log(&ctx.out_dir.join("epochs.jsonl"), |cb| {
        fine_tune_observed(model, &items, &config, cb)
    })?;
    let last = outcome.log.last().expect("at least one epoch");
    emit(
        out,
        &format!(
            "trained {} steps on {} items, final mean loss {:.4}, train accuracy {:.3} -> {}\n",
            outcome.steps,
            items.len(),
            last.mean_loss,
            last.train_accuracy,
            ckpt.display()
        ),
    )
}

fn cmd_eval(ctx: &Context, out_given: bool, args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let labels = ctx.config.label_set()?;
    let (gold, pred) = match (&args.predictions, &args.checkpoint, &args.data) {
        (Some(path), _, _) => parse_predictions(&read_text(path)?, &labels)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?,
        (None, Some(ckpt), Some(data)) => {
            let model = load_or_init(ctx, Some(ckpt), None, &labels)?;
            let records = read_prepared(data)?;
            let inputs: Vec<EncodedInput> = records
                .iter()
                .map(|r| EncodedInput::from_ids(r.token_ids.clone(), r.attention_mask.clone()))
                .collect();
            let pred = model.predict(&inputs)?;
            (records.iter().map(|r| r.label_id).collect(), pred)
        }
        _ => return Err(CliError::input("eval needs --predictions or --checkpoint with --data")),
    };
    let report = score(&gold, &pred, &labels)?;
    emit(out, &render_report(&report))?;
    if out_given {
        create_dir(&ctx.out_dir)?;
        write_file(&ctx.out_dir.join("report.json"), report.to_json() + "\n")?;
    }
    Ok(())
}

fn cmd_predict(ctx: &Context, args: &PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let labels = ctx.config.label_set()?;
    let vocab = Vocabulary::load(&args.vocab)?;
    let model = load_or_init(ctx, Some(&args.checkpoint), Some(vocab.len()), &labels)?;
    let max_len = ctx.config.max_len.min(model.config.max_position);
    let input = encode(&args.text, &vocab, max_len);
    let probs = model.predict_proba(&[input])?.remove(0);
    let mut text = String::new();
    for (name, p) in labels.names().iter().zip(&probs) {
        let _ = writeln!(text, "{name:<10} {p:.4}");
    }
    let best = crate::model::argmax(&probs);
    let _ = writeln!(text, "label: {}", labels.name(best).expect("label in range"));
    emit(out, &text)
}
