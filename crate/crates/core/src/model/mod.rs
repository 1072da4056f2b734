//! Transformer encoder with a `[CLS]` softmax classifier and a masked-LM head.
//!
//! The encoder is a stack of post-norm transformer blocks over learned token,
//! position and segment embeddings. The classifier reads the raw final hidden
//! state at position 0; there is no pooler layer.

mod checkpoint;
mod config;
mod encoder;
mod heads;
mod params;

use std::path::Path;

use thiserror::Error;

pub use checkpoint::{
    from_bytes, load_checkpoint, save_checkpoint, to_bytes, CheckpointError, MAGIC, VERSION,
};
pub use config::{ModelConfig, SEGMENT_VOCAB};
pub use encoder::{encode, EncoderOutput, Mode};
pub(crate) use encoder::{check_batch, splitmix};
pub use heads::{classify, mlm_forward, mlm_loss, ClassifierHead, MlmOutput};
pub use params::{param_shapes, Bound, Params, INIT_STD};

use crate::autodiff::{AutodiffError, Tape};
use crate::tokenizer::{trim_batch, EncodedInput};

const PREDICT_CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("sequence length {len} outside 1..={max_position}")]
    SequenceLength { len: usize, max_position: usize },
    #[error("batch item {index}: ids, mask and segments must all have length {expected}")]
    RaggedBatch { index: usize, expected: usize },
    #[error("batch item {index}: token id {id} >= vocab_size {vocab_size}")]
    TokenOutOfRange { index: usize, id: u32, vocab_size: usize },
    #[error("masked-LM targets must be {batch} rows of length {seq_len}")]
    TargetsLayout { batch: usize, seq_len: usize },
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("parameter {name:?}: shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// A configuration together with a matching set of weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionModel {
    pub config: ModelConfig,
    pub params: Params,
}

impl EmotionModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let params = Params::init(&config, seed);
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: Params) -> Result<Self, ModelError> {
        config.validate()?;
        params.validate(&config)?;
        Ok(Self { config, params })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let (params, config) = load_checkpoint(path)?;
        Self::from_parts(config, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        Ok(save_checkpoint(&self.params, &self.config, path)?)
    }

    /// Eval-mode class probabilities, one row per input.
    pub fn predict_proba(&self, inputs: &[EncodedInput]) -> Result<Vec<Vec<f64>>, ModelError> {
        check_batch(&self.config, inputs)?;
        let labels = self.config.num_labels;
        let mut rows = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(PREDICT_CHUNK) {
            let (_, chunk) = trim_batch(chunk);
            let mut tape = Tape::new();
            let bound = self.params.bind(&mut tape, false);
            let out = encode(&mut tape, &self.config, &bound, &chunk, Mode::Eval)?;
            let head = ClassifierHead::from_bound(&bound)?;
            let probs = classify(&mut tape, &out, &head)?;
            rows.extend(tape.value(probs).data().chunks(labels).map(<[f64]>::to_vec));
        }
        Ok(rows)
    }

    /// Eval-mode argmax class per input.
    pub fn predict(&self, inputs: &[EncodedInput]) -> Result<Vec<usize>, ModelError> {
        Ok(self.predict_proba(inputs)?.iter().map(|row| argmax(row)).collect())
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
