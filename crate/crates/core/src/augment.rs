//! Back-translation augmentation.
//!
//! Text is translated into a pivot language and back through a
//! [`TranslationProvider`]. Every provider call goes through a
//! [`TranslationCache`] keyed by provider, language pair and text digest; the
//! cache can be backed by an append-only file so interrupted jobs resume
//! without repeating finished calls. No network provider ships here; the
//! bundled ones are an identity stub and a tab-separated lookup table.

use std::cell::Cell;
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{load_corpus, Corpus, DataError, Source};

pub const SOURCE_LANGUAGE: &str = "en";

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("translation table line {line}: expected 4 tab-separated fields")]
    TableLine { line: usize },
    #[error("cache file line {line}: {what}")]
    CacheLine { line: usize, what: String },
    #[error("provider {provider} failed on {source_lang}->{target_lang} for {text:?}: {message}")]
    Provider {
        provider: String,
        source_lang: String,
        target_lang: String,
        text: String,
        message: String,
    },
    #[error("invalid job: {0}")]
    Job(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl AugmentError {
    /// Provider failures can be retried; everything else is permanent.
    pub fn is_retryable(&self) -> bool {
        matches!(self, AugmentError::Provider { .. })
    }
}

/// Something that translates text between two languages.
pub trait TranslationProvider {
    /// Stable name, part of the cache key.
    fn name(&self) -> &str;
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, String>;
}

/// Returns its input unchanged.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityProvider;

impl TranslationProvider for IdentityProvider {
    fn name(&self) -> &str {
        "identity"
    }

    fn translate(&self, text: &str, _: &str, _: &str) -> Result<String, String> {
        Ok(text.to_string())
    }
}

/// Lookup table read from lines `src<TAB>tgt<TAB>source text<TAB>target text`.
/// Missing entries are provider failures.
#[derive(Debug, Default, Clone)]
pub struct TableProvider {
    entries: HashMap<(String, String, String), String>,
    calls: Cell<usize>,
}

impl TableProvider {
    pub fn parse(text: &str) -> Result<Self, AugmentError> {
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [src, tgt, from, to] = fields[..] else {
                return Err(AugmentError::TableLine { line: i + 1 });
            };
            entries.insert((src.into(), tgt.into(), from.into()), to.to_string());
        }
        Ok(Self {
            entries,
            calls: Cell::new(0),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AugmentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| AugmentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Number of `translate` calls made so far.
    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl TranslationProvider for TableProvider {
    fn name(&self) -> &str {
        "table"
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, String> {
        self.calls.set(self.calls.get() + 1);
        self.entries
            .get(&(source.to_string(), target.to_string(), text.to_string()))
            .cloned()
            .ok_or_else(|| "no table entry".to_string())
    }
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    text: String,
}

/// Memo of provider results, optionally persisted as JSON lines.
#[derive(Debug, Default)]
pub struct TranslationCache {
    entries: HashMap<String, String>,
    file: Option<BufWriter<File>>,
    hits: usize,
    misses: usize,
}

impl TranslationCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads existing records from `path` (if any) and appends new ones to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AugmentError> {
        let path = path.as_ref();
        let io = |source| AugmentError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut entries = HashMap::new();
        let mut torn_tail = false;
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(io)?;
            torn_tail = !text.is_empty() && !text.ends_with('\n');
            let lines: Vec<&str> = text.lines().collect();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(line) {
                    Ok(rec) => {
                        entries.insert(rec.key, rec.text);
                    }
                    // torn final line from an interrupted run
                    Err(_) if torn_tail && i + 1 == lines.len() => {}
                    Err(e) => {
                        return Err(AugmentError::CacheLine {
                            line: i + 1,
                            what: e.to_string(),
                        })
                    }
                }
            }
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        if torn_tail {
            file.write_all(b"\n").map_err(io)?;
        }
        Ok(Self {
            entries,
            file: Some(BufWriter::new(file)),
            hits: 0,
            misses: 0,
        })
    }

    pub fn key(provider: &str, source: &str, target: &str, text: &str) -> String {
        let digest = Sha256::digest(text.as_bytes());
        format!("{provider}|{source}|{target}|{}", hex::encode(digest))
    }

    pub fn hits(&self) -> usize {
        self.hits
    }

    pub fn misses(&self) -> usize {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns the cached translation or asks the provider and records it.
    pub fn translate(
        &mut self,
        provider: &dyn TranslationProvider,
        text: &str,
        source: &str,
        target: &str,
    ) -> Result<String, AugmentError> {
        let key = Self::key(provider.name(), source, target, text);
        if let Some(hit) = self.entries.get(&key) {
            self.hits += 1;
            return Ok(hit.clone());
        }
        self.misses += 1;
        let out = provider
            .translate(text, source, target)
            .map_err(|message| AugmentError::Provider {
                provider: provider.name().to_string(),
                source_lang: source.to_string(),
                target_lang: target.to_string(),
                text: text.to_string(),
                message,
            })?;
        if let Some(file) = &mut self.file {
            let line = serde_json::to_string(&CacheRecord {
                key: key.clone(),
                text: out.clone(),
            })
            .expect("record serializes");
            writeln!(file, "{line}")
                .and_then(|_| file.flush())
                .map_err(|source| AugmentError::Io {
                    path: "translation cache".into(),
                    source,
                })?;
        }
        self.entries.insert(key, out.clone());
        Ok(out)
    }
}

/// English → `pivot` → English.
pub fn back_translate(
    text: &str,
    pivot: &str,
    provider: &dyn TranslationProvider,
    cache: &mut TranslationCache,
) -> Result<String, AugmentError> {
    let there = cache.translate(provider, text, SOURCE_LANGUAGE, pivot)?;
    cache.translate(provider, &there, pivot, SOURCE_LANGUAGE)
}

/// Which provider a job uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderChoice {
    Identity,
    Table { path: PathBuf },
}

impl ProviderChoice {
    pub fn build(&self) -> Result<Box<dyn TranslationProvider>, AugmentError> {
        Ok(match self {
            ProviderChoice::Identity => Box::new(IdentityProvider),
            ProviderChoice::Table { path } => Box::new(TableProvider::load(path)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationJob {
    pub input: PathBuf,
    pub pivots: Vec<String>,
    pub provider: ProviderChoice,
    pub output_dir: PathBuf,
    pub cache: Option<PathBuf>,
}

impl AugmentationJob {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.pivots.is_empty() {
            return Err(AugmentError::Job("at least one pivot language is required".into()));
        }
        if let Some(p) = self.pivots.iter().find(|p| p.as_str() == SOURCE_LANGUAGE) {
            return Err(AugmentError::Job(format!("pivot {p:?} equals the source language")));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AugmentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| AugmentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let job: Self = serde_json::from_str(&text).map_err(|e| AugmentError::Job(e.to_string()))?;
        job.validate()?;
        Ok(job)
    }
}

/// An utterance whose back-translation failed; it was copied unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedUtterance {
    pub dialogue: usize,
    pub utterance: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotReport {
    pub pivot: String,
    pub output: PathBuf,
    pub successes: usize,
    pub failures: Vec<FailedUtterance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobReport {
    pub input: PathBuf,
    pub utterances: usize,
    pub pivots: Vec<PivotReport>,
}

/// Back-translates one corpus through `pivot`, keeping dialogue structure and
/// labels. Failed utterances keep their original text and are reported.
pub fn augment_corpus(
    corpus: &Corpus,
    pivot: &str,
    provider: &dyn TranslationProvider,
    cache: &mut TranslationCache,
) -> Result<(Corpus, usize, Vec<FailedUtterance>), AugmentError> {
    let mut successes = 0;
    let mut failures = Vec::new();
    let mut dialogues = Vec::with_capacity(corpus.dialogues.len());
    for (d, dialogue) in corpus.dialogues.iter().enumerate() {
        let mut out = Vec::with_capacity(dialogue.len());
        for (u, record) in dialogue.iter().enumerate() {
            let mut rec = record.clone();
            rec.source = Source::Augmented(pivot.to_string());
            match back_translate(&record.utterance, pivot, provider, cache) {
                Ok(text) => {
                    rec.utterance = text;
                    successes += 1;
                }
                Err(e) if e.is_retryable() => failures.push(FailedUtterance {
                    dialogue: d,
                    utterance: u,
                    message: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
            out.push(rec);
        }
        dialogues.push(out);
    }
    let augmented = Corpus {
        name: format!("{}.{pivot}", corpus.name),
        dialogues,
    };
    Ok((augmented, successes, failures))
}

/// Runs a job: one output corpus per pivot, written as
/// `<output_dir>/<input stem>.<pivot>.json`, plus `<input stem>.report.json`.
pub fn run_augmentation(
    job: &AugmentationJob,
    provider: &dyn TranslationProvider,
) -> Result<JobReport, AugmentError> {
    job.validate()?;
    let corpus = load_corpus(&job.input)?;
    let mut cache = match &job.cache {
        Some(path) => TranslationCache::open(path)?,
        None => TranslationCache::in_memory(),
    };
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| AugmentError::Io { path, source }
    };
    std::fs::create_dir_all(&job.output_dir).map_err(io(&job.output_dir))?;
    let mut pivots = Vec::with_capacity(job.pivots.len());
    for pivot in &job.pivots {
        let (augmented, successes, failures) = augment_corpus(&corpus, pivot, provider, &mut cache)?;
        let output = job.output_dir.join(format!("{}.{pivot}.json", corpus.name));
        std::fs::write(&output, augmented.to_json()).map_err(io(&output))?;
        pivots.push(PivotReport {
            pivot: pivot.clone(),
            output,
            successes,
            failures,
        });
    }
    let report = JobReport {
        input: job.input.clone(),
        utterances: corpus.utterance_count(),
        pivots,
    };
    let report_path = job.output_dir.join(format!("{}.report.json", corpus.name));
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&report_path, json).map_err(io(&report_path))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_roundtrip() {
        let mut cache = TranslationCache::in_memory();
        let out = back_translate("Okay!", "fr", &IdentityProvider, &mut cache).unwrap();
        assert_eq!(out, "Okay!");
    }

    #[test]
    fn table_lookup_and_cache_hits() {
        let table = TableProvider::parse("en\tfr\thi\tsalut\nfr\ten\tsalut\thello\n").unwrap();
        let mut cache = TranslationCache::in_memory();
        assert_eq!(back_translate("hi", "fr", &table, &mut cache).unwrap(), "hello");
        assert_eq!(table.calls(), 2);
        assert_eq!(back_translate("hi", "fr", &table, &mut cache).unwrap(), "hello");
        assert_eq!(table.calls(), 2);
        assert_eq!(cache.hits(), 2);
    }

    #[test]
    fn missing_entry_is_retryable() {
        let table = TableProvider::parse("en\tfr\thi\tsalut\n").unwrap();
        let mut cache = TranslationCache::in_memory();
        let err = back_translate("hi", "fr", &table, &mut cache).unwrap_err();
        assert!(err.is_retryable());
        assert!(err.to_string().contains("salut"));
    }

    #[test]
    fn malformed_table_line() {
        assert!(matches!(
            TableProvider::parse("en\tfr\thi\n"),
            Err(AugmentError::TableLine { line: 1 })
        ));
    }

    #[test]
    fn file_cache_persists_across_opens() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let table = TableProvider::parse("en\tde\tyes\tja\nde\ten\tja\tyeah\n").unwrap();
        {
            let mut cache = TranslationCache::open(&path).unwrap();
            assert_eq!(back_translate("yes", "de", &table, &mut cache).unwrap(), "yeah");
        }
        let mut cache = TranslationCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(back_translate("yes", "de", &table, &mut cache).unwrap(), "yeah");
        assert_eq!(table.calls(), 2);
        assert_eq!(cache.misses(), 0);
    }

    #[test]
    fn job_validation() {
        let job = AugmentationJob {
            input: "x.json".into(),
            pivots: vec![],
            provider: ProviderChoice::Identity,
            output_dir: "out".into(),
            cache: None,
        };
        assert!(job.validate().is_err());
        let job = AugmentationJob {
            pivots: vec!["fr".into(), "en".into()],
            ..job
        };
        assert!(job.validate().is_err());
        let parsed: AugmentationJob = serde_json::from_str(
            r#"{"input":"a.json","pivots":["fr"],"provider":{"kind":"table","path":"t.tsv"},"output_dir":"o","cache":null}"#,
        )
        .unwrap();
        assert_eq!(parsed.provider, ProviderChoice::Table { path: "t.tsv".into() });
    }
}
