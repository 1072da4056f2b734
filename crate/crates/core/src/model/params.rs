use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, SEGMENT_VOCAB};
use super::ModelError;
use crate::autodiff::{Tape, Tensor, Var};

pub const INIT_STD: f64 = 0.02;

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Every parameter name with its shape and initializer, in a fixed order.
fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let h = config.hidden_size;
    let i = config.intermediate_size;
    let v = config.vocab_size;
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init| out.push((name, shape, init));

    push("embeddings.word".into(), vec![v, h], Init::Normal);
    push("embeddings.position".into(), vec![config.max_position, h], Init::Normal);
    push("embeddings.segment".into(), vec![SEGMENT_VOCAB, h], Init::Normal);
    push("embeddings.norm.gamma".into(), vec![h], Init::Ones);
    push("embeddings.norm.beta".into(), vec![h], Init::Zeros);
    for l in 0..config.num_layers {
        let p = format!("encoder.{l}");
        for proj in ["query", "key", "value", "output"] {
            push(format!("{p}.attention.{proj}.weight"), vec![h, h], Init::Normal);
            push(format!("{p}.attention.{proj}.bias"), vec![h], Init::Zeros);
        }
        push(format!("{p}.attention.norm.gamma"), vec![h], Init::Ones);
        push(format!("{p}.attention.norm.beta"), vec![h], Init::Zeros);
        push(format!("{p}.ffn.inner.weight"), vec![i, h], Init::Normal);
        push(format!("{p}.ffn.inner.bias"), vec![i], Init::Zeros);
        push(format!("{p}.ffn.outer.weight"), vec![h, i], Init::Normal);
        push(format!("{p}.ffn.outer.bias"), vec![h], Init::Zeros);
        push(format!("{p}.ffn.norm.gamma"), vec![h], Init::Ones);
        push(format!("{p}.ffn.norm.beta"), vec![h], Init::Zeros);
    }
    push("classifier.weight".into(), vec![config.num_labels, h], Init::Normal);
    push("classifier.bias".into(), vec![config.num_labels], Init::Zeros);
    push("mlm.transform.weight".into(), vec![h, h], Init::Normal);
    push("mlm.transform.bias".into(), vec![h], Init::Zeros);
    push("mlm.norm.gamma".into(), vec![h], Init::Ones);
    push("mlm.norm.beta".into(), vec![h], Init::Zeros);
    push("mlm.bias".into(), vec![v], Init::Zeros);
    out
}

/// Expected `(name, shape)` pairs for `config`.
pub fn param_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    layout(config).into_iter().map(|(n, s, _)| (n, s)).collect()
}

/// Named model weights. Iteration order is lexicographic by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    tensors: BTreeMap<String, Tensor>,
}

impl Params {
    /// Truncated-normal (±2σ) weights, zero biases, unit norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut tensors = BTreeMap::new();
        for (name, shape, init) in layout(config) {
            let t = match init {
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::ones(&shape),
                Init::Normal => {
                    let n = shape.iter().product();
                    let data = (0..n)
                        .map(|_| loop {
                            let x: f64 = normal.sample(&mut rng);
                            if x.abs() <= 2.0 * INIT_STD {
                                break x;
                            }
                        })
                        .collect();
                    Tensor::new(shape, data).expect("layout shape")
                }
            };
            tensors.insert(name, t);
        }
        Self { tensors }
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    /// Checks names and shapes against `config`: nothing missing, nothing extra.
    pub fn validate(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let expected = param_shapes(config);
        for (name, shape) in &expected {
            let t = self
                .tensors
                .get(name)
                .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if self.tensors.len() != expected.len() {
            let unknown = self
                .tensors
                .keys()
                .find(|k| !expected.iter().any(|(n, _)| n == *k))
                .cloned()
                .unwrap_or_default();
            return Err(ModelError::UnknownParam(unknown));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Largest absolute elementwise difference; `None` if the name sets or
    /// shapes differ.
    pub fn max_abs_diff(&self, other: &Params) -> Option<f64> {
        if self.tensors.len() != other.tensors.len() {
            return None;
        }
        let mut worst = 0.0f64;
        for (name, a) in &self.tensors {
            let b = other.tensors.get(name)?;
            if a.shape() != b.shape() {
                return None;
            }
            for (x, y) in a.data().iter().zip(b.data()) {
                worst = worst.max((x - y).abs());
            }
        }
        Some(worst)
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t.clone(), requires_grad)))
            .collect();
        Bound { vars }
    }
}

/// Parameters recorded on a tape, addressable by name.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl FromIterator<(String, Var)> for Bound {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Self {
            vars: iter.into_iter().collect(),
        }
    }
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Collects the gradient of every bound parameter after a backward pass.
    pub fn grads(&self, tape: &Tape) -> BTreeMap<String, Vec<f64>> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = tape
                    .grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tape.value(v).numel()]);
                (name.clone(), g)
            })
            .collect()
    }
}
