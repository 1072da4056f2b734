#![allow(dead_code)]

use emoclf::model::ModelConfig;
use emoclf::tokenizer::{encode, EncodedInput, Vocabulary};
use emoclf::train::TrainItem;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const KEYWORDS: [&str; 4] = ["okay", "great", "sad", "angry"];
const TEMPLATES: [&str; 4] = ["{}!", "it is {}", "that was {} today", "i feel {}"];
const FILLERS: [&str; 12] = [
    "it", "is", "that", "was", "today", "i", "feel", "so", "the", "a", "and", "then",
];

pub fn overfit_vocab() -> Vocabulary {
    let mut words: Vec<&str> = KEYWORDS.to_vec();
    words.extend(FILLERS);
    words.push("!");
    Vocabulary::with_specials(words).unwrap()
}

/// 16 items, 4 per class, each carrying its class keyword.
pub fn overfit_texts() -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for (label, kw) in KEYWORDS.iter().enumerate() {
        for t in TEMPLATES {
            out.push((t.replace("{}", kw), label));
        }
    }
    out
}

pub fn overfit_items(vocab: &Vocabulary) -> Vec<TrainItem> {
    overfit_texts()
        .into_iter()
        .map(|(text, label)| TrainItem {
            input: encode(&text, vocab, 128),
            label,
        })
        .collect()
}

pub fn desk_config(vocab: &Vocabulary) -> ModelConfig {
    ModelConfig::desk(vocab.len())
}

/// Vocabulary for the transfer fixture: per class, 4 synonymous keywords and
/// 6 context words, plus shared fillers.
pub struct TransferWorld {
    pub vocab: Vocabulary,
    pub keywords: Vec<Vec<String>>,
    pub contexts: Vec<Vec<String>>,
}

impl TransferWorld {
    pub fn new() -> Self {
        let keywords: Vec<Vec<String>> = (0..4)
            .map(|c| (0..4).map(|j| format!("kw{c}{j}")).collect())
            .collect();
        let contexts: Vec<Vec<String>> = (0..4)
            .map(|c| (0..6).map(|j| format!("ctx{c}{j}")).collect())
            .collect();
        let mut words: Vec<String> = FILLERS.iter().map(|s| s.to_string()).collect();
        words.extend(keywords.iter().flatten().cloned());
        words.extend(contexts.iter().flatten().cloned());
        let vocab = Vocabulary::with_specials(words).unwrap();
        Self {
            vocab,
            keywords,
            contexts,
        }
    }

    /// Unlabeled sentences where every keyword of a class appears among that
    /// class's context words.
    pub fn pretraining_corpus(&self, n: usize, seed: u64) -> Vec<EncodedInput> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let c = rng.random_range(0..4);
                let mut words: Vec<&str> = Vec::new();
                for _ in 0..3 {
                    words.push(self.contexts[c].choose(&mut rng).unwrap());
                }
                let at = rng.random_range(0..=words.len());
                words.insert(at, self.keywords[c].choose(&mut rng).unwrap());
                for _ in 0..2 {
                    words.push(self.contexts[c].choose(&mut rng).unwrap());
                }
                encode(&words.join(" "), &self.vocab, 16)
            })
            .collect()
    }

    /// Labeled sentences of fillers plus one keyword drawn from `keyword_ids`.
    pub fn labeled(&self, n: usize, keyword_ids: &[usize], seed: u64) -> Vec<TrainItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let c = i % 4;
                let mut words: Vec<&str> = (0..3).map(|_| *FILLERS.choose(&mut rng).unwrap()).collect();
                let j = *keyword_ids.choose(&mut rng).unwrap();
                let at = rng.random_range(0..=words.len());
                words.insert(at, &self.keywords[c][j]);
                TrainItem {
                    input: encode(&words.join(" "), &self.vocab, 16),
                    label: c,
                }
            })
            .collect()
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            max_position: 16,
            ..ModelConfig::desk(self.vocab.len())
        }
    }
}

/// `n_sentences` sentences, each one word repeated 4 to 8 times, over a
/// vocabulary of `n_words` words. Any masked word is given by its neighbours.
pub fn echo_corpus(n_words: usize, n_sentences: usize, seed: u64) -> (Vocabulary, Vec<EncodedInput>) {
    let words: Vec<String> = (0..n_words).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::with_specials(words.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texts = (0..n_sentences)
        .map(|_| {
            let word = words.choose(&mut rng).unwrap().as_str();
            let n = rng.random_range(4..=8);
            encode(&vec![word; n].join(" "), &vocab, 16)
        })
        .collect();
    (vocab, texts)
}

/// Overfit fixture model trained to convergence: a sharp minimum from which
/// an aggressive learning rate with single-item batches blows the loss up.
pub fn stiff_model() -> (Vocabulary, Vec<TrainItem>, emoclf::model::EmotionModel) {
    use emoclf::model::EmotionModel;
    use emoclf::train::{fine_tune, TrainConfig};
    let vocab = overfit_vocab();
    let items = overfit_items(&vocab);
    let config = TrainConfig {
        batch_size: 8,
        learning_rate: 1e-3,
        epochs: 40,
        seed: 1,
        ..Default::default()
    };
    let model = fine_tune(EmotionModel::new(desk_config(&vocab), 1).unwrap(), &items, &config)
        .unwrap()
        .model;
    (vocab, items, model)
}

/// Greedy longest-match reference: at each position take the longest prefix
/// of the remainder that is in `pieces` (with `##` after the first piece).
pub fn greedy_oracle(word: &str, pieces: &std::collections::HashSet<String>) -> Option<Vec<String>> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() || chars.len() > 100 {
        return None;
    }
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < chars.len() {
        let spelled = |end: usize| {
            let body: String = chars[pos..end].iter().collect();
            if pos == 0 { body } else { format!("##{body}") }
        };
        let end = (pos + 1..=chars.len()).filter(|&e| pieces.contains(&spelled(e))).max()?;
        out.push(spelled(end));
        pos = end;
    }
    Some(out)
}

/// A random subword vocabulary over a small alphabet plus random words.
pub fn random_wordpiece_case(rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<String>) {
    const ALPHABET: [char; 4] = ['a', 'b', 'c', 'd'];
    let random_str = |rng: &mut ChaCha8Rng, len: usize| -> String {
        (0..len).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
    };
    let mut pieces = std::collections::BTreeSet::new();
    for _ in 0..rng.random_range(3..20) {
        let len = rng.random_range(1..5);
        let s = random_str(rng, len);
        if rng.random_bool(0.5) {
            pieces.insert(format!("##{s}"));
        } else {
            pieces.insert(s);
        }
    }
    let words = (0..rng.random_range(1..6))
        .map(|_| {
            let len = rng.random_range(1..9);
            random_str(rng, len)
        })
        .collect();
    (pieces.into_iter().collect(), words)
}

pub const SPEAKERS: [&str; 3] = ["Monica", "Joey", "Chandler"];

/// A corpus of random dialogues over all eight raw emotions. Utterances are
/// drawn from the overfit fixture's words so the fixture vocabulary covers them.
pub fn random_corpus(name: &str, rng: &mut ChaCha8Rng, max_dialogues: usize) -> emoclf::data::Corpus {
    use emoclf::data::{Corpus, Source, UtteranceRecord, RAW_EMOTIONS};
    let dialogues = (0..rng.random_range(1..=max_dialogues))
        .map(|_| {
            (0..rng.random_range(1..8))
                .map(|_| {
                    let emotion = RAW_EMOTIONS.choose(rng).unwrap().to_string();
                    let n = rng.random_range(1..7);
                    let mut words: Vec<&str> = (0..n).map(|_| *FILLERS.choose(rng).unwrap()).collect();
                    words.push(KEYWORDS.choose(rng).unwrap());
                    UtteranceRecord {
                        speaker: SPEAKERS.choose(rng).unwrap().to_string(),
                        utterance: words.join(" "),
                        emotion,
                        source: Source::Original,
                    }
                })
                .collect()
        })
        .collect();
    Corpus {
        name: name.to_string(),
        dialogues,
    }
}

/// An aligned copy of `original` with paraphrased text, tagged with `pivot`.
/// Labels are kept except that a few are resampled, so the selection law is
/// checked against the augmented corpus's own labels.
pub fn aligned_copy(original: &emoclf::data::Corpus, pivot: &str, rng: &mut ChaCha8Rng) -> emoclf::data::Corpus {
    use emoclf::data::{Corpus, Source, RAW_EMOTIONS};
    let dialogues = original
        .dialogues
        .iter()
        .map(|d| {
            d.iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.utterance = format!("so {}", r.utterance);
                    if rng.random_bool(0.2) {
                        r.emotion = RAW_EMOTIONS.choose(rng).unwrap().to_string();
                    }
                    r.source = Source::Augmented(pivot.to_string());
                    r
                })
                .collect()
        })
        .collect();
    Corpus {
        name: format!("{}.{pivot}", original.name),
        dialogues,
    }
}

/// Translation table covering every utterance of `corpus` for each pivot:
/// `en -> pivot` tags the text, `pivot -> en` prepends "so".
pub fn translation_table(corpus: &emoclf::data::Corpus, pivots: &[&str]) -> String {
    let mut lines = std::collections::BTreeSet::new();
    for r in corpus.records() {
        for p in pivots {
            let there = format!("<{p}> {}", r.utterance);
            lines.insert(format!("en\t{p}\t{}\t{there}", r.utterance));
            lines.insert(format!("{p}\ten\t{there}\tso {}", r.utterance));
        }
    }
    lines.into_iter().map(|l| l + "\n").collect()
}
