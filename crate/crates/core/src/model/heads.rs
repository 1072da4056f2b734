use super::encoder::{linear, norm, splitmix, Dropout, EncoderOutput, Mode};
use super::params::Bound;
use super::ModelError;
use crate::autodiff::{Tape, Tensor, Var};

const CLASSIFIER_SEED_SALT: u64 = 0x636c_6173_7369_6679;

/// Softmax classifier over the `[CLS]` state: `p(c | s) = softmax(W·h + b)`.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierHead {
    /// `[num_labels, hidden]`
    pub weight: Var,
    /// `[num_labels]`
    pub bias: Var,
}

impl ClassifierHead {
    pub fn from_bound(p: &Bound) -> Result<Self, ModelError> {
        Ok(Self {
            weight: p.get("classifier.weight")?,
            bias: p.get("classifier.bias")?,
        })
    }

    /// `W·h + b` per batch row. In train mode `h` first passes through dropout.
    pub fn logits(
        &self,
        tape: &mut Tape,
        cls_state: Var,
        mode: Mode,
        dropout_prob: f64,
    ) -> Result<Var, ModelError> {
        let mode = match mode {
            Mode::Train { seed } => Mode::Train {
                seed: splitmix(seed ^ CLASSIFIER_SEED_SALT),
            },
            Mode::Eval => Mode::Eval,
        };
        let h = Dropout::new(dropout_prob, mode).apply(tape, cls_state)?;
        let (w_shape, h_shape) = (tape.shape(self.weight).to_vec(), tape.shape(h).to_vec());
        if w_shape.len() != 2 || h_shape.len() != 2 || w_shape[1] != h_shape[1] {
            return Err(ModelError::Autodiff(crate::autodiff::AutodiffError::ShapeMismatch {
                op: "classifier",
                left: w_shape,
                right: h_shape,
            }));
        }
        let wt = tape.transpose(self.weight)?;
        let z = tape.matmul(h, wt)?;
        Ok(tape.add_bias(z, self.bias)?)
    }
}

/// Class probabilities `[batch, num_labels]` from the encoder's `[CLS]` state.
pub fn classify(tape: &mut Tape, output: &EncoderOutput, head: &ClassifierHead) -> Result<Var, ModelError> {
    let logits = head.logits(tape, output.cls_state, Mode::Eval, 0.0)?;
    Ok(tape.softmax(logits, 1)?)
}

/// Masked-LM loss together with the vocabulary logits it was computed from.
#[derive(Debug, Clone)]
pub struct MlmOutput {
    pub loss: Var,
    /// `[masked, vocab]`, absent when nothing is masked.
    pub logits: Option<Var>,
    /// Original token id per masked position, in batch-major order.
    pub labels: Vec<usize>,
}

/// Mean cross-entropy over masked positions of a vocabulary projection of
/// the hidden states. The projection is a dense + GELU + layer-norm
/// transform followed by the (tied) word-embedding matrix and a bias.
///
/// `targets[b][pos]` holds the original token id for masked positions.
/// With no masked positions the loss is a constant 0.
pub fn mlm_loss(
    tape: &mut Tape,
    p: &Bound,
    output: &EncoderOutput,
    targets: &[Vec<Option<u32>>],
) -> Result<Var, ModelError> {
    Ok(mlm_forward(tape, p, output, targets)?.loss)
}

/// As [`mlm_loss`], also returning the logits.
pub fn mlm_forward(
    tape: &mut Tape,
    p: &Bound,
    output: &EncoderOutput,
    targets: &[Vec<Option<u32>>],
) -> Result<MlmOutput, ModelError> {
    if targets.len() != output.batch || targets.iter().any(|t| t.len() != output.seq_len) {
        return Err(ModelError::TargetsLayout {
            batch: output.batch,
            seq_len: output.seq_len,
        });
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (b, row) in targets.iter().enumerate() {
        for (pos, t) in row.iter().enumerate() {
            if let Some(id) = t {
                rows.push(b * output.seq_len + pos);
                labels.push(*id as usize);
            }
        }
    }
    if rows.is_empty() {
        return Ok(MlmOutput {
            loss: tape.constant(Tensor::scalar(0.0)),
            logits: None,
            labels,
        });
    }
    let hidden = *tape.shape(output.hidden_states).last().expect("rank 3");
    let flat = tape.reshape(output.hidden_states, &[output.batch * output.seq_len, hidden])?;
    let picked = tape.gather_rows(flat, &rows)?;
    let t = linear(tape, p, picked, "mlm.transform")?;
    let t = tape.gelu(t);
    let t = norm(tape, p, t, "mlm.norm")?;
    let emb = p.get("embeddings.word")?;
    let emb_t = tape.transpose(emb)?;
    let logits = tape.matmul(t, emb_t)?;
    let logits = tape.add_bias(logits, p.get("mlm.bias")?)?;
    let loss = tape.cross_entropy(logits, &labels)?;
    Ok(MlmOutput {
        loss,
        logits: Some(logits),
        labels,
    })
}
