//! Dialogue corpora: loading, label filtering, augmentation merging,
//! statistics and batching.
//!
//! Corpus files are JSON: a top-level array of dialogues, each an array of
//! utterance objects with string fields `speaker`, `utterance` and `emotion`.
//! Augmented corpora may add a `pivot` field naming the language the text was
//! round-tripped through. Other fields (e.g. `annotation`) are ignored.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tokenizer::{basic_tokenize, wordpiece_tokenize, Vocabulary};

/// Raw emotion inventory of the source corpora.
pub const RAW_EMOTIONS: [&str; 8] = [
    "neutral",
    "joy",
    "sadness",
    "fear",
    "anger",
    "surprise",
    "disgust",
    "non-neutral",
];

/// Fraction of trailing dialogues held out by [`split_dev`].
pub const DEV_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed corpus JSON: {0}")]
    Json(String),
    #[error("{0}")]
    Structure(String),
    #[error("dialogue {dialogue}, utterance {utterance}: {what}")]
    Record {
        dialogue: usize,
        utterance: usize,
        what: String,
    },
    #[error("dialogue {0} is empty")]
    EmptyDialogue(usize),
    #[error("corpus has no dialogues")]
    EmptyCorpus,
    #[error("augmented corpus {corpus} is misaligned with the original: {what}")]
    Misaligned { corpus: usize, what: String },
}

/// Where an utterance's text came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Original,
    /// Back-translated through the named pivot language.
    Augmented(String),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Original => f.write_str("original"),
            Source::Augmented(pivot) => write!(f, "augmented:{pivot}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub speaker: String,
    pub utterance: String,
    pub emotion: String,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub dialogues: Vec<Vec<UtteranceRecord>>,
}

impl Corpus {
    pub fn utterance_count(&self) -> usize {
        self.dialogues.iter().map(Vec::len).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &UtteranceRecord> {
        self.dialogues.iter().flatten()
    }

    /// Parses corpus JSON text.
    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self, DataError> {
        let value: Value = serde_json::from_str(text).map_err(|e| DataError::Json(e.to_string()))?;
        let Value::Array(dialogues) = value else {
            return Err(DataError::Structure("top level must be an array of dialogues".into()));
        };
        if dialogues.is_empty() {
            return Err(DataError::EmptyCorpus);
        }
        let mut out = Vec::with_capacity(dialogues.len());
        for (d, dialogue) in dialogues.iter().enumerate() {
            let Value::Array(turns) = dialogue else {
                return Err(DataError::Structure(format!("dialogue {d} is not an array")));
            };
            if turns.is_empty() {
                return Err(DataError::EmptyDialogue(d));
            }
            let mut records = Vec::with_capacity(turns.len());
            for (u, turn) in turns.iter().enumerate() {
                let err = |what: String| DataError::Record {
                    dialogue: d,
                    utterance: u,
                    what,
                };
                let Value::Object(obj) = turn else {
                    return Err(err("not an object".into()));
                };
                let field = |key: &str| -> Result<String, DataError> {
                    match obj.get(key) {
                        Some(Value::String(s)) => Ok(s.clone()),
                        Some(_) => Err(err(format!("field {key:?} is not a string"))),
                        None => Err(err(format!("missing field {key:?}"))),
                    }
                };
                let emotion = field("emotion")?;
                if !RAW_EMOTIONS.contains(&emotion.as_str()) {
                    return Err(err(format!("unknown emotion {emotion:?}")));
                }
                let source = match obj.get("pivot") {
                    None | Some(Value::Null) => Source::Original,
                    Some(Value::String(p)) => Source::Augmented(p.clone()),
                    Some(_) => return Err(err("field \"pivot\" is not a string".into())),
                };
                records.push(UtteranceRecord {
                    speaker: field("speaker")?,
                    utterance: field("utterance")?,
                    emotion,
                    source,
                });
            }
            out.push(records);
        }
        Ok(Self {
            name: name.into(),
            dialogues: out,
        })
    }

    /// Serializes back to the corpus JSON format.
    pub fn to_json(&self) -> String {
        let dialogues: Vec<Vec<Value>> = self
            .dialogues
            .iter()
            .map(|d| {
                d.iter()
                    .map(|r| {
                        let mut obj = serde_json::Map::new();
                        obj.insert("speaker".into(), Value::String(r.speaker.clone()));
                        obj.insert("utterance".into(), Value::String(r.utterance.clone()));
                        obj.insert("emotion".into(), Value::String(r.emotion.clone()));
                        if let Source::Augmented(p) = &r.source {
                            obj.insert("pivot".into(), Value::String(p.clone()));
                        }
                        Value::Object(obj)
                    })
                    .collect()
            })
            .collect();
        serde_json::to_string_pretty(&dialogues).expect("corpus serializes")
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Corpus::parse(name, &text)
}

/// The ordered target labels; a label's index is its class id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    pub const DEFAULT: [&'static str; 4] = ["neutral", "joy", "sadness", "anger"];

    pub fn new(labels: &[&str]) -> Self {
        Self {
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    /// The label whose augmented copies are discarded.
    pub fn neutral(&self) -> &str {
        &self.labels[0]
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        Self::new(&Self::DEFAULT)
    }
}

/// A labelled training example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledText {
    pub text: String,
    pub label: usize,
    pub source: Source,
}

/// Builds the training set: every original utterance whose label is a target
/// label, followed by augmented variants of the non-neutral target labels,
/// corpus by corpus. Augmented neutral utterances are dropped so the extra
/// data only grows the minority classes. Blank utterances are skipped.
pub fn select_training_data(
    original: &Corpus,
    augmented: &[Corpus],
    labels: &LabelSet,
) -> Result<Vec<LabeledText>, DataError> {
    for (c, aug) in augmented.iter().enumerate() {
        if aug.dialogues.len() != original.dialogues.len() {
            return Err(DataError::Misaligned {
                corpus: c,
                what: format!(
                    "{} dialogues vs {}",
                    aug.dialogues.len(),
                    original.dialogues.len()
                ),
            });
        }
        for (d, (a, o)) in aug.dialogues.iter().zip(&original.dialogues).enumerate() {
            if a.len() != o.len() {
                return Err(DataError::Misaligned {
                    corpus: c,
                    what: format!("dialogue {d} has {} utterances vs {}", a.len(), o.len()),
                });
            }
        }
    }

    let eligible = |r: &UtteranceRecord| !r.utterance.trim().is_empty();
    let mut out: Vec<LabeledText> = original
        .records()
        .filter(|r| eligible(r))
        .filter_map(|r| {
            labels.id(&r.emotion).map(|label| LabeledText {
                text: r.utterance.clone(),
                label,
                source: Source::Original,
            })
        })
        .collect();
    for aug in augmented {
        let default_pivot = Source::Augmented(aug.name.clone());
        out.extend(
            aug.records()
                .filter(|r| eligible(r) && r.emotion != labels.neutral())
                .filter_map(|r| {
                    let source = match &r.source {
                        Source::Original => default_pivot.clone(),
                        s => s.clone(),
                    };
                    labels.id(&r.emotion).map(|label| LabeledText {
                        text: r.utterance.clone(),
                        label,
                        source,
                    })
                }),
        );
    }
    Ok(out)
}

/// Splits off the trailing dialogues as a dev set.
///
/// With `n` dialogues the dev part holds `round(n · DEV_FRACTION)` of them,
/// at least one when `n >= 2`, and the training part is never empty.
pub fn split_dev(corpus: &Corpus) -> (Corpus, Corpus) {
    let n = corpus.dialogues.len();
    let mut dev = ((n as f64) * DEV_FRACTION).round() as usize;
    if n >= 2 {
        dev = dev.clamp(1, n - 1);
    } else {
        dev = 0;
    }
    let cut = n - dev;
    let part = |suffix: &str, dialogues: &[Vec<UtteranceRecord>]| Corpus {
        name: format!("{}{suffix}", corpus.name),
        dialogues: dialogues.to_vec(),
    };
    (
        part("", &corpus.dialogues[..cut]),
        part(".dev", &corpus.dialogues[cut..]),
    )
}

/// Dataset summary in the dialogue/utterance/token/length layout plus a
/// per-label histogram.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub name: String,
    pub dialogues: usize,
    pub utterances: usize,
    pub tokens: usize,
    pub avg_len: f64,
    pub max_len: usize,
    /// Counts for every label seen, including non-target ones.
    pub label_counts: BTreeMap<String, usize>,
    /// Counts for the target labels in class-id order.
    pub target_counts: Vec<(String, usize)>,
}

impl CorpusStats {
    pub fn target_total(&self) -> usize {
        self.target_counts.iter().map(|(_, c)| c).sum()
    }

    /// Two small tables: the dataset summary and the target-label histogram.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16}{:>10}{:>12}{:>10}{:>9}{:>9}\n",
            "", "dialogues", "utterances", "tokens", "avg len", "max len"
        ));
        out.push_str(&format!(
            "{:<16}{:>10}{:>12}{:>10}{:>9.1}{:>9}\n\n",
            self.name, self.dialogues, self.utterances, self.tokens, self.avg_len, self.max_len
        ));
        out.push_str(&format!("{:<16}", ""));
        for (label, _) in &self.target_counts {
            out.push_str(&format!("{label:>10}"));
        }
        out.push_str(&format!("{:>10}\n{:<16}", "total", self.name));
        for (_, count) in &self.target_counts {
            out.push_str(&format!("{count:>10}"));
        }
        out.push_str(&format!("{:>10}\n", self.target_total()));
        out
    }
}

/// Counts tokens with WordPiece when a vocabulary is given, otherwise with
/// the basic whitespace/punctuation split.
pub fn corpus_stats(corpus: &Corpus, vocab: Option<&Vocabulary>, labels: &LabelSet) -> CorpusStats {
    let mut tokens = 0;
    let mut max_len = 0;
    let mut label_counts = BTreeMap::new();
    for r in corpus.records() {
        let n = match vocab {
            Some(v) => wordpiece_tokenize(&r.utterance, v).len(),
            None => basic_tokenize(&r.utterance).len(),
        };
        tokens += n;
        max_len = max_len.max(n);
        *label_counts.entry(r.emotion.clone()).or_insert(0) += 1;
    }
    let utterances = corpus.utterance_count();
    let target_counts = labels
        .names()
        .iter()
        .map(|l| (l.clone(), label_counts.get(l).copied().unwrap_or(0)))
        .collect();
    CorpusStats {
        name: corpus.name.clone(),
        dialogues: corpus.dialogues.len(),
        utterances,
        tokens,
        avg_len: if utterances == 0 {
            0.0
        } else {
            tokens as f64 / utterances as f64
        },
        max_len,
        label_counts,
        target_counts,
    }
}

/// Chunks `items` into batches of `batch_size`, keeping a final partial
/// batch. With `shuffle`, the order is a seeded uniform permutation.
///
/// # Panics
/// If `batch_size` is zero.
pub fn make_batches<T: Clone>(items: &[T], batch_size: usize, seed: u64, shuffle: bool) -> Vec<Vec<T>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..items.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(batch_size)
        .map(|chunk| chunk.iter().map(|&i| items[i].clone()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(text: &str, emotion: &str) -> UtteranceRecord {
        UtteranceRecord {
            speaker: "A".into(),
            utterance: text.into(),
            emotion: emotion.into(),
            source: Source::Original,
        }
    }

    fn corpus(dialogues: Vec<Vec<UtteranceRecord>>) -> Corpus {
        Corpus {
            name: "fixture".into(),
            dialogues,
        }
    }

    #[test]
    fn parses_fixture_and_ignores_annotation() {
        let text = r#"[
            [{"speaker":"A","utterance":"hi","emotion":"neutral","annotation":"4000"},
             {"speaker":"B","utterance":"yay!","emotion":"joy"},
             {"speaker":"A","utterance":"hm","emotion":"surprise"}],
            [{"speaker":"C","utterance":"no","emotion":"anger"},
             {"speaker":"D","utterance":"ok","emotion":"neutral"}]
        ]"#;
        let c = Corpus::parse("f", text).unwrap();
        assert_eq!(c.dialogues.len(), 2);
        assert_eq!(c.utterance_count(), 5);
        assert_eq!(c.dialogues[0][1].utterance, "yay!");
        assert_eq!(Corpus::parse("f", &c.to_json()).unwrap(), c);
    }

    #[test]
    fn reports_record_position() {
        let text = r#"[[{"speaker":"A","utterance":"hi","emotion":"joy"}],
                       [{"speaker":"A","utterance":"x","emotion":"joy"},
                        {"speaker":"B","utterance":"y"}]]"#;
        let err = Corpus::parse("f", text).unwrap_err();
        assert!(
            matches!(&err, DataError::Record { dialogue: 1, utterance: 1, what } if what.contains("emotion")),
            "{err}"
        );
        assert!(matches!(Corpus::parse("f", "[[]]"), Err(DataError::EmptyDialogue(0))));
        assert!(matches!(Corpus::parse("f", "[]"), Err(DataError::EmptyCorpus)));
        assert!(matches!(Corpus::parse("f", "{"), Err(DataError::Json(_))));
        let bad = r#"[[{"speaker":"A","utterance":"hi","emotion":"bored"}]]"#;
        assert!(matches!(Corpus::parse("f", bad), Err(DataError::Record { .. })));
    }

    #[test]
    fn augmented_neutral_is_discarded() {
        let original = corpus(vec![vec![
            record("a", "neutral"),
            record("b", "neutral"),
            record("c", "joy"),
        ]]);
        let mut aug = original.clone();
        aug.name = "fr".into();
        for r in aug.dialogues[0].iter_mut() {
            r.utterance.push_str(" (fr)");
            r.source = Source::Augmented("fr".into());
        }
        let labels = LabelSet::default();
        let out = select_training_data(&original, &[aug], &labels).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out.iter().filter(|x| x.label == 0).count(), 2);
        assert_eq!(out[3].text, "c (fr)");
        assert_eq!(out[3].source, Source::Augmented("fr".into()));

        let plain = select_training_data(&original, &[], &labels).unwrap();
        assert_eq!(plain.len(), 3);
    }

    #[test]
    fn non_target_labels_are_dropped() {
        let original = corpus(vec![vec![record("wow", "surprise"), record("meh", "neutral")]]);
        let out = select_training_data(&original, std::slice::from_ref(&original), &LabelSet::default()).unwrap();
        assert!(out.iter().all(|x| x.text != "wow"));
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn misalignment_is_an_error() {
        let original = corpus(vec![vec![record("a", "joy"), record("b", "joy")]]);
        let short = corpus(vec![vec![record("a", "joy")]]);
        assert!(matches!(
            select_training_data(&original, &[short], &LabelSet::default()),
            Err(DataError::Misaligned { corpus: 0, .. })
        ));
    }

    #[test]
    fn stats_count_labels() {
        let c = corpus(vec![
            vec![record("a b", "neutral"), record("c", "neutral")],
            vec![record("d e f!", "joy"), record("g", "anger")],
        ]);
        let s = corpus_stats(&c, None, &LabelSet::default());
        assert_eq!(s.dialogues, 2);
        assert_eq!(s.utterances, 4);
        assert_eq!(s.tokens, 2 + 1 + 4 + 1);
        assert_eq!(s.max_len, 4);
        assert_eq!(
            s.target_counts,
            vec![
                ("neutral".to_string(), 2),
                ("joy".to_string(), 1),
                ("sadness".to_string(), 0),
                ("anger".to_string(), 1)
            ]
        );
        let table = s.render();
        assert!(table.contains("dialogues"));
        assert!(table.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["fixture", "2", "1", "0", "1", "4"]));
    }

    #[test]
    fn batches_keep_partial_tail() {
        let items: Vec<u32> = (0..50).collect();
        let sizes: Vec<usize> = make_batches(&items, 24, 0, false).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![24, 24, 2]);
        assert_eq!(make_batches(&items, 24, 7, true), make_batches(&items, 24, 7, true));
        assert_ne!(make_batches(&items, 24, 7, true), make_batches(&items, 24, 8, true));
    }

    #[test]
    fn dev_split_takes_trailing_tenth() {
        let c = corpus((0..20).map(|i| vec![record(&i.to_string(), "joy")]).collect());
        let (train, dev) = split_dev(&c);
        assert_eq!(train.dialogues.len(), 18);
        assert_eq!(dev.dialogues.len(), 2);
        assert_eq!(dev.dialogues[0][0].utterance, "18");
        let (t, d) = split_dev(&corpus(vec![vec![record("x", "joy")]]));
        assert_eq!((t.dialogues.len(), d.dialogues.len()), (1, 0));
    }
}
