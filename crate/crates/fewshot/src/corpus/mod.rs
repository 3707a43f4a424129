//! Corpus ingestion, the unified task registry, pretrained word vectors,
//! the persisted character alphabet, and episode sampling.

mod alphabet;
mod episode;
mod parsers;
mod registry;
mod vectors;

pub use alphabet::{CharAlphabet, CHAR_ONE_HOT_DIM};
pub use episode::{sample_episode, Episode};
pub use parsers::{ingest, to_unified_jsonl, IngestSummary, Source};
pub use registry::{split_snips, Registry, SplitPool, TaskRegistry, SNIPS_TEST_INTENTS, SNIPS_TRAIN_INTENTS};
pub use vectors::{load_word_vectors, EmbeddingTable};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum utterance count an intent must reach (across splits) to be
/// retained when ingesting the filtered source corpora.
pub const MIN_UTTERANCES_PER_INTENT: usize = 20;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: malformed record: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}:{line}: word vector has {got} values, expected {expected}")]
    WordVectorLength {
        file: String,
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("task {task:?} is missing intent {intent:?}")]
    MissingIntent { task: String, intent: String },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("registry has no tasks")]
    EmptyRegistry,
    #[error("class {intent:?} of task {task:?} has no samples in the requested split")]
    EmptyClass { task: String, intent: String },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Partition membership of an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

/// One labeled text sample: the unit of corpus ingestion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub text: String,
    pub tokens: Vec<String>,
    pub intent: String,
    pub task_id: String,
    pub split: Split,
}

impl Utterance {
    /// Tokenizes and validates; empty token lists and empty intents are
    /// rejected because downstream stages cannot consume them.
    pub fn new(
        text: impl Into<String>,
        intent: impl Into<String>,
        task_id: impl Into<String>,
        split: Split,
    ) -> std::result::Result<Self, String> {
        let text = text.into();
        let intent = intent.into();
        let tokens = tokenize(&text);
        if tokens.is_empty() {
            return Err(format!("text {text:?} has no tokens"));
        }
        if intent.is_empty() {
            return Err("empty intent".to_string());
        }
        Ok(Utterance {
            text,
            tokens,
            intent,
            task_id: task_id.into(),
            split,
        })
    }
}

/// Lowercases, detaches punctuation into standalone tokens, and splits on
/// whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut spaced = String::with_capacity(lower.len() + 8);
    for c in lower.chars() {
        if c.is_alphanumeric() || c.is_whitespace() {
            spaced.push(c);
        } else {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_detaches_punctuation() {
        assert_eq!(
            tokenize("Play Mozart's 5th, please!"),
            vec!["play", "mozart", "'", "s", "5th", ",", "please", "!"]
        );
    }

    #[test]
    fn tokenize_empty_and_whitespace() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \t").is_empty());
    }

    #[test]
    fn utterance_requires_tokens_and_intent() {
        assert!(Utterance::new("", "intent", "task", Split::Train).is_err());
        assert!(Utterance::new("hello", "", "task", Split::Train).is_err());
        let u = Utterance::new("Hello there", "greet", "task", Split::Validation).unwrap();
        assert_eq!(u.tokens, vec!["hello", "there"]);
    }
}
