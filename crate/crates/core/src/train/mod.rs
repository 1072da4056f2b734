//! Fine-tuning and masked-LM pretraining with Adam.
//!
//! Both loops run single-threaded with seeded shuffling, dropout and masking,
//! so a run is bit-for-bit reproducible from its seed.

mod adam;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, clip_grad_norm, AdamConfig, AdamState, Moments};

use crate::autodiff::{Tape, Var};
use crate::data::make_batches;
use crate::model::{
    argmax, check_batch, encode, mlm_forward, splitmix, ClassifierHead, EmotionModel, ModelError, Mode,
};
use crate::tokenizer::{mask_tokens, trim_batch, EncodedInput, Vocabulary, DEFAULT_MASK_PROB};

pub const DEFAULT_FINE_TUNE_LR: f64 = 2e-5;
pub const DEFAULT_PRETRAIN_LR: f64 = 1e-3;
/// An epoch whose mean loss exceeds this multiple of the first batch loss aborts the run.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

const SHUFFLE_SALT: u64 = 0x7368_7566_666c_6521;
const DROPOUT_SALT: u64 = 0x6472_6f70_6f75_7421;
const MASK_SALT: u64 = 0x6d61_736b_696e_6721;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training items")]
    NoData,
    #[error("item {index} has label {label} but the model has {classes} labels")]
    Label {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("gradient for unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("gradient for `{name}` has {found} values, parameter has {expected}")]
    GradientShape {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite gradient for `{name}` at index {index}: {value}")]
    NonFiniteGradient { name: String, index: usize, value: f64 },
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: u64, loss: f64 },
    #[error(
        "training diverged: epoch {epoch} mean loss {mean_loss:.4} exceeds {DIVERGENCE_FACTOR}x \
         the initial loss {initial_loss:.4}; an aggressive learning rate such as 5e-4 can make \
         training fail to converge, try a smaller one"
    )]
    Diverged {
        epoch: usize,
        mean_loss: f64,
        initial_loss: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl TrainError {
    /// Whether the failure is numerical rather than a problem with the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Self::NonFiniteGradient { .. } | Self::NonFiniteLoss { .. } | Self::Diverged { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Global L2 gradient-norm limit.
    pub clip_norm: Option<f64>,
    /// Masking probability for MLM pretraining.
    pub mask_prob: f64,
    /// Where to save the final weights.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 24,
            learning_rate: DEFAULT_FINE_TUNE_LR,
            epochs: 4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            clip_norm: None,
            mask_prob: DEFAULT_MASK_PROB,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    /// Defaults for toy-scale MLM pretraining.
    pub fn pretraining() -> Self {
        Self {
            learning_rate: DEFAULT_PRETRAIN_LR,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1".into());
        }
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return fail(format!("{name} must lie in [0, 1), got {beta}"));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return fail(format!("eps must be positive, got {}", self.eps));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return fail(format!("clip_norm must be positive, got {c}"));
            }
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return fail(format!("mask_prob must lie in [0, 1], got {}", self.mask_prob));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// One labeled, encoded utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainItem {
    pub input: EncodedInput,
    pub label: usize,
}

/// Per-epoch log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Fraction of items (fine-tuning) or masked positions (pretraining)
    /// predicted correctly during the epoch, with dropout active.
    pub train_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EmotionModel,
    pub log: Vec<EpochLog>,
    pub steps: u64,
}

fn mix(seed: u64, salt: u64, n: u64) -> u64 {
    splitmix(splitmix(seed ^ salt) ^ n)
}

/// Tracks the per-epoch loss sum and the divergence baseline.
struct Progress {
    initial_loss: Option<f64>,
    loss_sum: f64,
    loss_weight: f64,
    correct: usize,
    counted: usize,
    started: Instant,
}

impl Progress {
    fn new() -> Self {
        Self {
            initial_loss: None,
            loss_sum: 0.0,
            loss_weight: 0.0,
            correct: 0,
            counted: 0,
            started: Instant::now(),
        }
    }

    fn start_epoch(&mut self) {
        self.loss_sum = 0.0;
        self.loss_weight = 0.0;
        self.correct = 0;
        self.counted = 0;
        self.started = Instant::now();
    }

    fn record(&mut self, epoch: usize, step: u64, loss: f64, weight: usize) -> Result<(), TrainError> {
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, step, loss });
        }
        if self.initial_loss.is_none() && loss > 0.0 {
            self.initial_loss = Some(loss);
        }
        self.loss_sum += loss * weight as f64;
        self.loss_weight += weight as f64;
        Ok(())
    }

    fn finish_epoch(&self, epoch: usize) -> Result<EpochLog, TrainError> {
        let mean_loss = if self.loss_weight > 0.0 {
            self.loss_sum / self.loss_weight
        } else {
            0.0
        };
        let train_accuracy = if self.counted > 0 {
            self.correct as f64 / self.counted as f64
        } else {
            0.0
        };
        let log = EpochLog {
            epoch,
            mean_loss,
            train_accuracy,
            seconds: self.started.elapsed().as_secs_f64(),
        };
        if let Some(initial_loss) = self.initial_loss {
            if mean_loss > DIVERGENCE_FACTOR * initial_loss {
                return Err(TrainError::Diverged {
                    epoch,
                    mean_loss,
                    initial_loss,
                });
            }
        }
        Ok(log)
    }
}

fn apply_update(
    model: &mut EmotionModel,
    tape: &mut Tape,
    loss: Var,
    bound: &crate::model::Bound,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    tape.backward(loss).map_err(ModelError::from)?;
    let mut grads = bound.grads(tape);
    if let Some(limit) = config.clip_norm {
        clip_grad_norm(&mut grads, limit);
    }
    adam_step(&mut model.params, &grads, state, &config.adam())
}

fn count_correct(values: &[f64], classes: usize, labels: &[usize]) -> usize {
    values
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count()
}

/// Fine-tunes every parameter on cross-entropy of the `[CLS]` classifier.
pub fn fine_tune(model: EmotionModel, items: &[TrainItem], config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    fine_tune_observed(model, items, config, |_| {})
}

/// As [`fine_tune`], calling `on_epoch` after each completed epoch.
pub fn fine_tune_observed(
    mut model: EmotionModel,
    items: &[TrainItem],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if items.is_empty() {
        return Err(TrainError::NoData);
    }
    let classes = model.config.num_labels;
    if let Some((index, item)) = items.iter().enumerate().find(|(_, it)| it.label >= classes) {
        return Err(TrainError::Label {
            index,
            label: item.label,
            classes,
        });
    }
    let inputs: Vec<EncodedInput> = items.iter().map(|it| it.input.clone()).collect();
    check_batch(&model.config, &inputs)?;
    let dropout = model.config.dropout_prob;
    let mut state = AdamState::default();
    let mut progress = Progress::new();
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 1..=config.epochs {
        progress.start_epoch();
        let batches = make_batches(items, config.batch_size, mix(config.seed, SHUFFLE_SALT, epoch as u64), true);
        for batch in batches {
            step += 1;
            let inputs: Vec<EncodedInput> = batch.iter().map(|it| it.input.clone()).collect();
            let (_, inputs) = trim_batch(&inputs);
            let labels: Vec<usize> = batch.iter().map(|it| it.label).collect();

            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape, true);
            let mode = Mode::Train {
                seed: mix(config.seed, DROPOUT_SALT, step),
            };
            let out = encode(&mut tape, &model.config, &bound, &inputs, mode)?;
            let head = ClassifierHead::from_bound(&bound)?;
            let logits = head.logits(&mut tape, out.cls_state, mode, dropout)?;
            let loss = tape.cross_entropy(logits, &labels).map_err(ModelError::from)?;

            progress.record(epoch, step, tape.value(loss).data()[0], labels.len())?;
            progress.correct += count_correct(tape.value(logits).data(), classes, &labels);
            progress.counted += labels.len();
            apply_update(&mut model, &mut tape, loss, &bound, &mut state, config)?;
        }
        let entry = progress.finish_epoch(epoch)?;
        on_epoch(&entry);
        log.push(entry);
    }
    if let Some(path) = &config.checkpoint {
        model.save(path)?;
    }
    Ok(TrainOutcome {
        model,
        log,
        steps: step,
    })
}

/// Masked-LM pretraining over encoded texts. Each batch is re-masked with a
/// fresh seed, so every epoch sees different corruption.
pub fn pretrain_mlm(
    model: EmotionModel,
    texts: &[EncodedInput],
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    pretrain_mlm_observed(model, texts, vocab, config, |_| {})
}

/// As [`pretrain_mlm`], calling `on_epoch` after each completed epoch.
pub fn pretrain_mlm_observed(
    mut model: EmotionModel,
    texts: &[EncodedInput],
    vocab: &Vocabulary,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if texts.is_empty() {
        return Err(TrainError::NoData);
    }
    check_batch(&model.config, texts)?;
    let mut state = AdamState::default();
    let mut progress = Progress::new();
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 1..=config.epochs {
        progress.start_epoch();
        let batches = make_batches(texts, config.batch_size, mix(config.seed, SHUFFLE_SALT, epoch as u64), true);
        for batch in batches {
            step += 1;
            let (len, batch) = trim_batch(&batch);
            let mask_seed = mix(config.seed, MASK_SALT, step);
            let mut inputs = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for (i, text) in batch.iter().enumerate() {
                let masked = mask_tokens(text, vocab, config.mask_prob, splitmix(mask_seed ^ i as u64));
                inputs.push(masked.input);
                targets.push(masked.targets);
            }
            debug_assert!(targets.iter().all(|t| t.len() == len));

            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape, true);
            let mode = Mode::Train {
                seed: mix(config.seed, DROPOUT_SALT, step),
            };
            let out = encode(&mut tape, &model.config, &bound, &inputs, mode)?;
            let mlm = mlm_forward(&mut tape, &bound, &out, &targets)?;

            progress.record(epoch, step, tape.value(mlm.loss).data()[0], mlm.labels.len())?;
            if let Some(logits) = mlm.logits {
                let vocab_size = model.config.vocab_size;
                progress.correct += count_correct(tape.value(logits).data(), vocab_size, &mlm.labels);
            }
            progress.counted += mlm.labels.len();
            apply_update(&mut model, &mut tape, mlm.loss, &bound, &mut state, config)?;
        }
        let entry = progress.finish_epoch(epoch)?;
        on_epoch(&entry);
        log.push(entry);
    }
    if let Some(path) = &config.checkpoint {
        model.save(path)?;
    }
    Ok(TrainOutcome {
        model,
        log,
        steps: step,
    })
}

/// Eval-mode masked-LM loss over `texts`, masked with a fixed seed so that
/// the same positions are scored before and after training.
pub fn mlm_eval_loss(
    model: &EmotionModel,
    texts: &[EncodedInput],
    vocab: &Vocabulary,
    mask_prob: f64,
    seed: u64,
) -> Result<f64, TrainError> {
    if texts.is_empty() {
        return Err(TrainError::NoData);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (c, chunk) in texts.chunks(64).enumerate() {
        let (_, chunk) = trim_batch(chunk);
        let mut inputs = Vec::with_capacity(chunk.len());
        let mut targets = Vec::with_capacity(chunk.len());
        for (i, text) in chunk.iter().enumerate() {
            let masked = mask_tokens(text, vocab, mask_prob, mix(seed, MASK_SALT, (c * 64 + i) as u64));
            inputs.push(masked.input);
            targets.push(masked.targets);
        }
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, false);
        let out = encode(&mut tape, &model.config, &bound, &inputs, Mode::Eval)?;
        let mlm = mlm_forward(&mut tape, &bound, &out, &targets)?;
        total += tape.value(mlm.loss).data()[0] * mlm.labels.len() as f64;
        count += mlm.labels.len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Eval-mode accuracy of `model` on `items`.
pub fn accuracy(model: &EmotionModel, items: &[TrainItem]) -> Result<f64, TrainError> {
    if items.is_empty() {
        return Err(TrainError::NoData);
    }
    let inputs: Vec<EncodedInput> = items.iter().map(|it| it.input.clone()).collect();
    let predicted = model.predict(&inputs)?;
    let correct = predicted.iter().zip(items).filter(|(p, it)| **p == it.label).count();
    Ok(correct as f64 / items.len() as f64)
}
