//! Source-corpus parsers feeding the unified registry.
//!
//! Four input layouts are supported:
//! - `Unified`: JSON-lines, one object per utterance with fields `text`,
//!   `intent`, `task`, `split`; unknown fields are ignored.
//! - `Snips`: the SNIPS release layout, per-intent JSON files named
//!   `train_<Intent>.json` / `train_<Intent>_full.json` /
//!   `validate_<Intent>.json`, each mapping the intent name to a list of
//!   `{"data": [{"text": ...}, ...]}` segments.
//! - `Tsv`: two-column `text<TAB>intent` exports (used for ATIS-style data).
//! - `Top`: three-column hierarchical-annotation exports whose third column
//!   carries a bracketed tree; the root `IN:` label is the intent, and rows
//!   with more than one root intent are dropped.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{
    CorpusError, Result, Split, TaskRegistry, Utterance, MIN_UTTERANCES_PER_INTENT,
};

/// One source corpus to ingest.
#[derive(Debug, Clone)]
pub enum Source {
    Unified {
        files: Vec<PathBuf>,
    },
    Snips {
        task_id: String,
        dir: PathBuf,
    },
    Tsv {
        task_id: String,
        train: Vec<PathBuf>,
        validation: Vec<PathBuf>,
        /// Apply the minimum-utterance filter to this task.
        filtered: bool,
    },
    Top {
        task_id: String,
        train: Vec<PathBuf>,
        validation: Vec<PathBuf>,
        filtered: bool,
    },
}

#[derive(Debug, Clone, Default)]
pub struct IngestSummary {
    /// (task, intent) -> (train count, validation count), post-filter.
    pub counts: BTreeMap<(String, String), (usize, usize)>,
    pub total_utterances: usize,
    pub total_intents: usize,
    pub warnings: Vec<String>,
    /// Rows skipped because they carry multiple root intents.
    pub multi_root_dropped: usize,
}

/// Parses every source into one registry, applies the minimum-utterance
/// filter to the sources that request it, and reports per-task counts.
/// Ordering is deterministic: tasks and intents sorted, samples in source
/// order.
pub fn ingest(sources: &[Source]) -> Result<(TaskRegistry, IngestSummary)> {
    let mut registry = TaskRegistry::new();
    let mut summary = IngestSummary::default();
    let mut filtered_tasks = Vec::new();
    for source in sources {
        match source {
            Source::Unified { files } => {
                for f in files {
                    parse_unified(f, &mut registry)?;
                }
            }
            Source::Snips { task_id, dir } => parse_snips_dir(dir, task_id, &mut registry)?,
            Source::Tsv {
                task_id,
                train,
                validation,
                filtered,
            } => {
                for f in train {
                    parse_tsv(f, task_id, Split::Train, &mut registry)?;
                }
                for f in validation {
                    parse_tsv(f, task_id, Split::Validation, &mut registry)?;
                }
                if *filtered {
                    filtered_tasks.push(task_id.clone());
                }
            }
            Source::Top {
                task_id,
                train,
                validation,
                filtered,
            } => {
                for f in train {
                    summary.multi_root_dropped +=
                        parse_top(f, task_id, Split::Train, &mut registry)?;
                }
                for f in validation {
                    summary.multi_root_dropped +=
                        parse_top(f, task_id, Split::Validation, &mut registry)?;
                }
                if *filtered {
                    filtered_tasks.push(task_id.clone());
                }
            }
        }
    }
    summary.warnings = registry.filter_min_utterances(&filtered_tasks, MIN_UTTERANCES_PER_INTENT);
    for (task, intents) in registry.iter_tasks() {
        for (intent, pool) in intents {
            summary.counts.insert(
                (task.clone(), intent.clone()),
                (pool.train.len(), pool.validation.len()),
            );
        }
    }
    summary.total_utterances = registry.total_items();
    summary.total_intents = registry.total_intents();
    Ok((registry, summary))
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        file: path.display().to_string(),
        line,
        message: message.into(),
    }
}

#[derive(Deserialize)]
struct UnifiedRecord {
    text: String,
    intent: String,
    task: String,
    split: Split,
}

fn parse_unified(path: &Path, registry: &mut TaskRegistry) -> Result<()> {
    let content = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: UnifiedRecord =
            serde_json::from_str(line).map_err(|e| malformed(path, i + 1, e.to_string()))?;
        let utt = Utterance::new(record.text, record.intent, record.task.clone(), record.split)
            .map_err(|e| malformed(path, i + 1, e))?;
        registry.push(&record.task, &utt.intent.clone(), record.split, utt);
    }
    Ok(())
}

/// Serializes a registry back to the unified JSON-lines form, one file per
/// task, returning (task, file contents) pairs.
pub fn to_unified_jsonl(registry: &TaskRegistry) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (task, intents) in registry.iter_tasks() {
        let mut lines = String::new();
        for (intent, pool) in intents {
            for (split, items) in [(Split::Train, &pool.train), (Split::Validation, &pool.validation)] {
                for u in items.iter() {
                    let obj = serde_json::json!({
                        "text": u.text,
                        "intent": intent,
                        "task": task,
                        "split": split,
                    });
                    lines.push_str(&obj.to_string());
                    lines.push('\n');
                }
            }
        }
        out.push((task.clone(), lines));
    }
    out
}

fn parse_snips_dir(dir: &Path, task_id: &str, registry: &mut TaskRegistry) -> Result<()> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json"))
        .collect();
    names.sort();
    // prefer train_<Intent>_full.json over train_<Intent>.json
    let full_variants: Vec<&str> = names
        .iter()
        .filter(|n| n.starts_with("train_") && n.ends_with("_full.json"))
        .map(String::as_str)
        .collect();
    for name in names.clone() {
        let (split, stem) = if let Some(rest) = name.strip_prefix("train_") {
            (Split::Train, rest.trim_end_matches(".json"))
        } else if let Some(rest) = name.strip_prefix("validate_") {
            (Split::Validation, rest.trim_end_matches(".json"))
        } else {
            continue;
        };
        if split == Split::Train
            && !stem.ends_with("_full")
            && full_variants.iter().any(|f| *f == format!("train_{stem}_full.json"))
        {
            continue;
        }
        let path = dir.join(&name);
        parse_snips_file(&path, task_id, split, registry)?;
    }
    Ok(())
}

fn parse_snips_file(
    path: &Path,
    task_id: &str,
    split: Split,
    registry: &mut TaskRegistry,
) -> Result<()> {
    let content = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let root: serde_json::Value =
        serde_json::from_str(&content).map_err(|e| malformed(path, 1, e.to_string()))?;
    let obj = root
        .as_object()
        .ok_or_else(|| malformed(path, 1, "expected a top-level object"))?;
    for (intent, entries) in obj {
        let entries = entries
            .as_array()
            .ok_or_else(|| malformed(path, 1, format!("intent {intent:?} is not an array")))?;
        for (i, entry) in entries.iter().enumerate() {
            let data = entry
                .get("data")
                .and_then(|d| d.as_array())
                .ok_or_else(|| malformed(path, i + 1, "entry without a data array"))?;
            let mut text = String::new();
            for seg in data {
                let piece = seg
                    .get("text")
                    .and_then(|t| t.as_str())
                    .ok_or_else(|| malformed(path, i + 1, "segment without text"))?;
                text.push_str(piece);
            }
            let utt = Utterance::new(text, intent.clone(), task_id, split)
                .map_err(|e| malformed(path, i + 1, e))?;
            registry.push(task_id, intent, split, utt);
        }
    }
    Ok(())
}

fn parse_tsv(path: &Path, task_id: &str, split: Split, registry: &mut TaskRegistry) -> Result<()> {
    let content = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.splitn(2, '\t');
        let text = cols.next().unwrap_or_default();
        let intent = cols
            .next()
            .ok_or_else(|| malformed(path, i + 1, "expected text<TAB>intent"))?
            .trim();
        let utt = Utterance::new(text, intent, task_id, split)
            .map_err(|e| malformed(path, i + 1, e))?;
        registry.push(task_id, intent, split, utt);
    }
    Ok(())
}

/// Root `IN:` labels of a bracketed annotation: labels of `[IN:x` tokens at
/// bracket depth zero.
fn root_intents(annotation: &str) -> Vec<String> {
    let mut roots = Vec::new();
    let mut depth = 0usize;
    for token in annotation.split_whitespace() {
        if let Some(rest) = token.strip_prefix('[') {
            if depth == 0 {
                if let Some(label) = rest.strip_prefix("IN:") {
                    roots.push(label.trim_end_matches(']').to_string());
                } else {
                    roots.push(String::new()); // non-intent root; treated as extra
                }
            }
            depth += 1;
        } else {
            depth = depth.saturating_sub(token.chars().filter(|c| *c == ']').count());
            continue;
        }
        depth = depth.saturating_sub(token.chars().filter(|c| *c == ']').count());
    }
    roots
}

/// Returns the number of rows dropped for having multiple root intents.
fn parse_top(
    path: &Path,
    task_id: &str,
    split: Split,
    registry: &mut TaskRegistry,
) -> Result<usize> {
    let content = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut dropped = 0;
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            return Err(malformed(path, i + 1, "expected 3 tab-separated columns"));
        }
        let roots = root_intents(cols[2]);
        if roots.len() != 1 || roots[0].is_empty() {
            dropped += 1;
            continue;
        }
        let utt = Utterance::new(cols[0], roots[0].clone(), task_id, split)
            .map_err(|e| malformed(path, i + 1, e))?;
        registry.push(task_id, &roots[0], split, utt);
    }
    Ok(dropped)
}
