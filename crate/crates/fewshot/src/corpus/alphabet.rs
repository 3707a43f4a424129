use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Result, TaskRegistry};

/// One-hot character dimension: 31 retained characters plus one catch-all.
pub const CHAR_ONE_HOT_DIM: usize = 32;

/// The retained character inventory, computed from corpus frequencies and
/// persisted so every stage one-hot encodes identically. Characters outside
/// the inventory share the final (catch-all) slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharAlphabet {
    chars: Vec<char>,
    #[serde(skip)]
    index: HashMap<char, usize>,
}

impl CharAlphabet {
    /// Builds the alphabet from the most frequent characters of the given
    /// token streams; frequency ties break on the lower code point.
    pub fn from_token_chars<'a>(tokens: impl Iterator<Item = &'a str>) -> Self {
        let mut counts: HashMap<char, u64> = HashMap::new();
        for token in tokens {
            for c in token.chars() {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(char, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(CHAR_ONE_HOT_DIM - 1);
        let mut chars: Vec<char> = ranked.into_iter().map(|(c, _)| c).collect();
        chars.sort_unstable();
        Self::from_chars(chars)
    }

    pub fn from_registry(registry: &TaskRegistry) -> Self {
        let tokens = registry
            .iter_tasks()
            .flat_map(|(_, intents)| intents.values())
            .flat_map(|pool| pool.train.iter())
            .flat_map(|u| u.tokens.iter().map(String::as_str));
        Self::from_token_chars(tokens)
    }

    pub fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        CharAlphabet { chars, index }
    }

    /// One-hot slot for `c`; unseen characters map to the stable catch-all
    /// slot `CHAR_ONE_HOT_DIM - 1`.
    pub fn index_of(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(CHAR_ONE_HOT_DIM - 1)
    }

    pub fn retained(&self) -> &[char] {
        &self.chars
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = serde_json::json!({"version": 1, "chars": self.chars});
        fs::write(path, serde_json::to_string_pretty(&doc).unwrap()).map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        #[derive(Deserialize)]
        struct Doc {
            chars: Vec<char>,
        }
        let doc: Doc = serde_json::from_str(&content).map_err(|e| CorpusError::Malformed {
            file: path.display().to_string(),
            line: 1,
            message: e.to_string(),
        })?;
        Ok(Self::from_chars(doc.chars))
    }
}
