use super::config::ModelConfig;
use super::params::Bound;
use super::ModelError;
use crate::autodiff::{Tape, Var, DEFAULT_LAYER_NORM_EPS};
use crate::tokenizer::EncodedInput;

/// Whether dropout is active. Train mode derives one seed per dropout site
/// from `seed`, so a forward pass is reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

/// Result of running the encoder over a batch.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[batch, seq, hidden]`
    pub hidden_states: Var,
    /// `[batch, hidden]`: the final hidden state at position 0 (`[CLS]`).
    pub cls_state: Var,
    /// Per layer, attention weights shaped `[batch·heads, seq, seq]`.
    pub attentions: Vec<Var>,
    pub batch: usize,
    pub seq_len: usize,
}

pub(crate) struct Dropout {
    prob: f64,
    mode: Mode,
    site: u64,
}

impl Dropout {
    pub(crate) fn new(prob: f64, mode: Mode) -> Self {
        Self { prob, mode, site: 0 }
    }

    pub(crate) fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
        let Mode::Train { seed } = self.mode else {
            return Ok(x);
        };
        self.site += 1;
        Ok(tape.dropout(x, self.prob, splitmix(seed ^ splitmix(self.site)), true)?)
    }
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `x · Wᵀ + b` with `W` stored as `[out, in]`.
pub(crate) fn linear(tape: &mut Tape, p: &Bound, x: Var, prefix: &str) -> Result<Var, ModelError> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    let wt = tape.transpose(w)?;
    let y = tape.matmul(x, wt)?;
    Ok(tape.add_bias(y, b)?)
}

pub(crate) fn norm(tape: &mut Tape, p: &Bound, x: Var, prefix: &str) -> Result<Var, ModelError> {
    let g = p.get(&format!("{prefix}.gamma"))?;
    let b = p.get(&format!("{prefix}.beta"))?;
    Ok(tape.layer_norm(x, g, b, DEFAULT_LAYER_NORM_EPS)?)
}

pub(crate) fn check_batch(config: &ModelConfig, inputs: &[EncodedInput]) -> Result<usize, ModelError> {
    let first = inputs.first().ok_or(ModelError::EmptyBatch)?;
    let seq = first.len();
    if seq == 0 || seq > config.max_position {
        return Err(ModelError::SequenceLength {
            len: seq,
            max_position: config.max_position,
        });
    }
    for (i, input) in inputs.iter().enumerate() {
        if input.token_ids.len() != seq
            || input.attention_mask.len() != seq
            || input.segment_ids.len() != seq
        {
            return Err(ModelError::RaggedBatch { index: i, expected: seq });
        }
        if let Some(&id) = input.token_ids.iter().find(|&&id| id as usize >= config.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                index: i,
                id,
                vocab_size: config.vocab_size,
            });
        }
        if let Some(&s) = input.segment_ids.iter().find(|&&s| s as usize >= super::SEGMENT_VOCAB) {
            return Err(ModelError::Config(format!("segment id {s} in batch item {i}")));
        }
    }
    Ok(seq)
}

/// Runs the embedding layer and every transformer block over `inputs`.
///
/// Key positions with attention mask 0 are excluded from every softmax, so
/// nothing at a padded position can reach an unpadded one.
pub fn encode(
    tape: &mut Tape,
    config: &ModelConfig,
    p: &Bound,
    inputs: &[EncodedInput],
    mode: Mode,
) -> Result<EncoderOutput, ModelError> {
    let seq = check_batch(config, inputs)?;
    let batch = inputs.len();
    let h = config.hidden_size;
    let heads = config.num_heads;
    let d = config.head_size();
    let mut dropout = Dropout::new(config.dropout_prob, mode);

    let ids: Vec<usize> = inputs
        .iter()
        .flat_map(|x| x.token_ids.iter().map(|&t| t as usize))
        .collect();
    let positions: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
    let segments: Vec<usize> = inputs
        .iter()
        .flat_map(|x| x.segment_ids.iter().map(|&s| s as usize))
        .collect();
    let keep: Vec<bool> = inputs
        .iter()
        .flat_map(|x| x.attention_mask.iter().map(|&m| m != 0))
        .collect();

    let word = tape.gather_rows(p.get("embeddings.word")?, &ids)?;
    let pos = tape.gather_rows(p.get("embeddings.position")?, &positions)?;
    let seg = tape.gather_rows(p.get("embeddings.segment")?, &segments)?;
    let sum = tape.add(word, pos)?;
    let sum = tape.add(sum, seg)?;
    let normed = norm(tape, p, sum, "embeddings.norm")?;
    let mut x = dropout.apply(tape, normed)?;

    let split_heads = |tape: &mut Tape, t: Var| -> Result<Var, ModelError> {
        let t = tape.reshape(t, &[batch, seq, heads, d])?;
        let t = tape.permute(t, &[0, 2, 1, 3])?;
        Ok(tape.reshape(t, &[batch * heads, seq, d])?)
    };

    let mut attentions = Vec::with_capacity(config.num_layers);
    for l in 0..config.num_layers {
        let prefix = format!("encoder.{l}");
        let q = linear(tape, p, x, &format!("{prefix}.attention.query"))?;
        let k = linear(tape, p, x, &format!("{prefix}.attention.key"))?;
        let v = linear(tape, p, x, &format!("{prefix}.attention.value"))?;
        let q = split_heads(tape, q)?;
        let k = split_heads(tape, k)?;
        let v = split_heads(tape, v)?;
        let kt = tape.permute(k, &[0, 2, 1])?;
        let scores = tape.batch_matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
        let probs = tape.masked_softmax(scores, &keep)?;
        attentions.push(probs);
        let probs = dropout.apply(tape, probs)?;
        let ctx = tape.batch_matmul(probs, v)?;
        let ctx = tape.reshape(ctx, &[batch, heads, seq, d])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[batch * seq, h])?;
        let attn_out = linear(tape, p, ctx, &format!("{prefix}.attention.output"))?;
        let attn_out = dropout.apply(tape, attn_out)?;
        let res = tape.add(x, attn_out)?;
        let x1 = norm(tape, p, res, &format!("{prefix}.attention.norm"))?;

        let inner = linear(tape, p, x1, &format!("{prefix}.ffn.inner"))?;
        let inner = tape.gelu(inner);
        let outer = linear(tape, p, inner, &format!("{prefix}.ffn.outer"))?;
        let outer = dropout.apply(tape, outer)?;
        let res = tape.add(x1, outer)?;
        x = norm(tape, p, res, &format!("{prefix}.ffn.norm"))?;
    }

    let cls_rows: Vec<usize> = (0..batch).map(|b| b * seq).collect();
    let cls_state = tape.gather_rows(x, &cls_rows)?;
    let hidden_states = tape.reshape(x, &[batch, seq, h])?;
    Ok(EncoderOutput {
        hidden_states,
        cls_state,
        attentions,
        batch,
        seq_len: seq,
    })
}
