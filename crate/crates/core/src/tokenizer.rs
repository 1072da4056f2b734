//! WordPiece tokenization and fixed-length model inputs.
//!
//! Text is lowercased, split on whitespace, and ASCII punctuation is split off
//! into standalone words. Each word is then decomposed greedily into the
//! longest vocabulary pieces, continuation pieces carrying a `##` prefix.
//! [`encode`] wraps the pieces as `[CLS] pieces [SEP] [PAD]...`, truncating
//! the content to `max_len - 2` pieces.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const SPECIAL_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub const CONTINUATION_PREFIX: &str = "##";
/// Words longer than this many characters become `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;
pub const DEFAULT_MAX_LEN: usize = 128;
pub const DEFAULT_MASK_PROB: f64 = 0.15;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot read vocab file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("vocab line {line}: empty token")]
    EmptyToken { line: usize },
    #[error("vocab line {line}: bare continuation prefix")]
    BareContinuation { line: usize },
    #[error("vocab line {line}: duplicate token {token:?} (first seen on line {first})")]
    Duplicate {
        token: String,
        line: usize,
        first: usize,
    },
    #[error("vocab is missing special token {0}")]
    MissingSpecial(&'static str),
}

/// Ordered token list; a token's id is its zero-based position.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    pad: u32,
    unk: u32,
    cls: u32,
    sep: u32,
    mask: u32,
}

impl Vocabulary {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            let line = i + 1;
            if tok.is_empty() {
                return Err(VocabError::EmptyToken { line });
            }
            if tok == CONTINUATION_PREFIX {
                return Err(VocabError::BareContinuation { line });
            }
            if let Some(first) = ids.insert(tok.clone(), i as u32) {
                return Err(VocabError::Duplicate {
                    token: tok.clone(),
                    line,
                    first: first as usize + 1,
                });
            }
        }
        let find = |name: &'static str| ids.get(name).copied().ok_or(VocabError::MissingSpecial(name));
        Ok(Self {
            pad: find(PAD)?,
            unk: find(UNK)?,
            cls: find(CLS)?,
            sep: find(SEP)?,
            mask: find(MASK)?,
            tokens,
            ids,
        })
    }

    /// Parses vocab-file text: one token per line, `\n` or `\r\n` endings.
    pub fn parse(text: &str) -> Result<Self, VocabError> {
        Self::from_tokens(text.lines())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The five special tokens (ids 0..5, `[PAD]` first) followed by `words`
    /// in order, skipping repeats.
    pub fn with_specials<I, S>(words: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        for w in words {
            let w = w.into();
            if !tokens.contains(&w) {
                tokens.push(w);
            }
        }
        Self::from_tokens(tokens)
    }

    /// One token per line, newline-terminated.
    pub fn to_file_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }
    pub fn unk_id(&self) -> u32 {
        self.unk
    }
    pub fn cls_id(&self) -> u32 {
        self.cls
    }
    pub fn sep_id(&self) -> u32 {
        self.sep
    }
    pub fn mask_id(&self) -> u32 {
        self.mask
    }

    pub fn is_special(&self, id: u32) -> bool {
        [self.pad, self.unk, self.cls, self.sep, self.mask].contains(&id)
    }
}

/// A fixed-length model input for one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub segment_ids: Vec<u32>,
    /// Number of real (unpadded) positions, including `[CLS]` and `[SEP]`.
    pub original_length: usize,
}

impl EncodedInput {
    /// Rebuilds an input from stored ids and mask; segments are all zero.
    pub fn from_ids(token_ids: Vec<u32>, attention_mask: Vec<u8>) -> Self {
        let original_length = attention_mask.iter().filter(|&&m| m == 1).count();
        let segment_ids = vec![0; token_ids.len()];
        Self {
            token_ids,
            attention_mask,
            segment_ids,
            original_length,
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Position one past the last attended token.
    pub fn attended_len(&self) -> usize {
        self.attention_mask.iter().rposition(|&m| m != 0).map_or(0, |i| i + 1)
    }

    /// The first `len` positions (or all of them, if shorter).
    pub fn truncated(&self, len: usize) -> Self {
        let len = len.min(self.len());
        Self {
            token_ids: self.token_ids[..len].to_vec(),
            attention_mask: self.attention_mask[..len].to_vec(),
            segment_ids: self.segment_ids[..len].to_vec(),
            original_length: self.original_length.min(len),
        }
    }
}

/// Cuts trailing positions that no input in the batch attends to. Masked
/// keys get exactly zero attention weight, so model outputs at the kept
/// positions are unchanged.
pub fn trim_batch(inputs: &[EncodedInput]) -> (usize, Vec<EncodedInput>) {
    let len = inputs.iter().map(EncodedInput::attended_len).max().unwrap_or(0).max(1);
    (len, inputs.iter().map(|x| x.truncated(len)).collect())
}

/// Lowercases and splits into words: whitespace separates, ASCII punctuation
/// marks become words of their own.
pub fn basic_tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut words = Vec::new();
    for chunk in lowered.split_whitespace() {
        let mut current = String::new();
        for ch in chunk.chars() {
            if ch.is_ascii_punctuation() {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(ch.to_string());
            } else {
                current.push(ch);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

/// Greedy longest-match-first decomposition of one word. Returns `None` when
/// some suffix cannot be matched or the word is too long.
pub fn wordpiece_word(word: &str, vocab: &Vocabulary) -> Option<Vec<String>> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() || chars.len() > MAX_WORD_CHARS {
        return None;
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while end > start {
            let mut candidate: String = chars[start..end].iter().collect();
            if start > 0 {
                candidate.insert_str(0, CONTINUATION_PREFIX);
            }
            if vocab.contains(&candidate) {
                found = Some(candidate);
                break;
            }
            end -= 1;
        }
        pieces.push(found?);
        start = end;
    }
    Some(pieces)
}

/// Full WordPiece tokenization of `text`; unmatched words become `[UNK]`.
pub fn wordpiece_tokenize(text: &str, vocab: &Vocabulary) -> Vec<String> {
    basic_tokenize(text)
        .iter()
        .flat_map(|w| wordpiece_word(w, vocab).unwrap_or_else(|| vec![UNK.to_string()]))
        .collect()
}

/// `[CLS]` + first `max_len - 2` pieces + `[SEP]`, padded to `max_len`.
///
/// # Panics
/// If `max_len < 3`.
pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> EncodedInput {
    assert!(max_len >= 3, "max_len must leave room for [CLS], [SEP] and content");
    let pieces = wordpiece_tokenize(text, vocab);
    let content = pieces.len().min(max_len - 2);
    let mut token_ids = Vec::with_capacity(max_len);
    token_ids.push(vocab.cls_id());
    token_ids.extend(
        pieces[..content]
            .iter()
            .map(|p| vocab.id(p).unwrap_or(vocab.unk_id())),
    );
    token_ids.push(vocab.sep_id());
    let original_length = token_ids.len();
    token_ids.resize(max_len, vocab.pad_id());
    let mut attention_mask = vec![1u8; original_length];
    attention_mask.resize(max_len, 0);
    EncodedInput {
        token_ids,
        attention_mask,
        segment_ids: vec![0; max_len],
        original_length,
    }
}

/// Masked-LM corruption output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedInput {
    pub input: EncodedInput,
    /// Original id at each selected position, `None` elsewhere.
    pub targets: Vec<Option<u32>>,
}

impl MaskedInput {
    pub fn masked_count(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }
}

/// Replaces each eligible content position by `[MASK]` with probability
/// `mask_prob`. Special tokens and padding are never selected.
///
/// # Panics
/// If `mask_prob` is outside `[0, 1]`.
pub fn mask_tokens(input: &EncodedInput, vocab: &Vocabulary, mask_prob: f64, seed: u64) -> MaskedInput {
    assert!((0.0..=1.0).contains(&mask_prob), "mask_prob {mask_prob} outside [0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corrupted = input.clone();
    let mut targets = vec![None; input.len()];
    for (pos, &id) in input.token_ids.iter().enumerate() {
        if input.attention_mask[pos] == 0 || vocab.is_special(id) {
            continue;
        }
        if rng.random::<f64>() < mask_prob {
            corrupted.token_ids[pos] = vocab.mask_id();
            targets[pos] = Some(id);
        }
    }
    MaskedInput {
        input: corrupted,
        targets,
    }
}
