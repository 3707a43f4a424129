use std::collections::BTreeMap;

use super::{CorpusError, Result, Split, Utterance};

pub const SNIPS_TRAIN_INTENTS: [&str; 4] = [
    "AddToPlaylist",
    "BookRestaurant",
    "RateBook",
    "SearchScreeningEvent",
];
pub const SNIPS_TEST_INTENTS: [&str; 3] = ["GetWeather", "PlayMusic", "SearchCreativeWork"];

/// Per-intent sample pools, indexed by split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPool<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
}

impl<T> Default for SplitPool<T> {
    fn default() -> Self {
        SplitPool {
            train: Vec::new(),
            validation: Vec::new(),
        }
    }
}

impl<T> SplitPool<T> {
    pub fn pool(&self, split: Split) -> &[T] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
        }
    }

    pub fn push(&mut self, split: Split, item: T) {
        match split {
            Split::Train => self.train.push(item),
            Split::Validation => self.validation.push(item),
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len()
    }
}

/// Tasks mapped to intents mapped to sample pools. The item type is generic
/// so the same machinery serves raw utterances and pre-embedded samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry<T> {
    tasks: BTreeMap<String, BTreeMap<String, SplitPool<T>>>,
}

pub type TaskRegistry = Registry<Utterance>;

impl<T> Default for Registry<T> {
    fn default() -> Self {
        Registry {
            tasks: BTreeMap::new(),
        }
    }
}

impl<T> Registry<T> {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn push(&mut self, task: &str, intent: &str, split: Split, item: T) {
        self.tasks
            .entry(task.to_string())
            .or_default()
            .entry(intent.to_string())
            .or_default()
            .push(split, item);
    }

    pub fn task_ids(&self) -> Vec<&str> {
        self.tasks.keys().map(String::as_str).collect()
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn intents(&self, task: &str) -> Result<Vec<&str>> {
        self.tasks
            .get(task)
            .map(|m| m.keys().map(String::as_str).collect())
            .ok_or_else(|| CorpusError::UnknownTask(task.to_string()))
    }

    pub fn pool(&self, task: &str, intent: &str, split: Split) -> Result<&[T]> {
        let intents = self
            .tasks
            .get(task)
            .ok_or_else(|| CorpusError::UnknownTask(task.to_string()))?;
        let pool = intents.get(intent).ok_or_else(|| CorpusError::MissingIntent {
            task: task.to_string(),
            intent: intent.to_string(),
        })?;
        Ok(pool.pool(split))
    }

    pub fn iter_tasks(&self) -> impl Iterator<Item = (&String, &BTreeMap<String, SplitPool<T>>)> {
        self.tasks.iter()
    }

    pub fn total_items(&self) -> usize {
        self.tasks
            .values()
            .flat_map(|m| m.values())
            .map(SplitPool::total)
            .sum()
    }

    pub fn total_intents(&self) -> usize {
        self.tasks.values().map(BTreeMap::len).sum()
    }

    /// Drops intents below `min_total` utterances (counted across splits) in
    /// the named tasks, then drops tasks left with fewer than two intents.
    /// Returns human-readable warnings for everything removed.
    pub fn filter_min_utterances(&mut self, tasks: &[String], min_total: usize) -> Vec<String> {
        let mut warnings = Vec::new();
        for task in tasks {
            let Some(intents) = self.tasks.get_mut(task) else {
                continue;
            };
            intents.retain(|intent, pool| {
                let keep = pool.total() >= min_total;
                if !keep {
                    warnings.push(format!(
                        "task {task:?}: dropped intent {intent:?} with {} < {min_total} utterances",
                        pool.total()
                    ));
                }
                keep
            });
        }
        self.tasks.retain(|task, intents| {
            let keep = intents.len() >= 2;
            if !keep {
                warnings.push(format!(
                    "dropped task {task:?}: {} intent(s) remain after filtering",
                    intents.len()
                ));
            }
            keep
        });
        warnings
    }

    /// Copy of this registry restricted to `keep(task, intent)`.
    pub fn filtered(&self, keep: impl Fn(&str, &str) -> bool) -> Registry<T>
    where
        T: Clone,
    {
        let mut out = Registry::new();
        for (task, intents) in &self.tasks {
            for (intent, pool) in intents {
                if keep(task, intent) {
                    out.tasks
                        .entry(task.clone())
                        .or_default()
                        .insert(intent.clone(), pool.clone());
                }
            }
        }
        out
    }
}

/// Splits the seven SNIPS intents into the fixed 4-intent train view and
/// 3-intent test view. All seven intents must be present.
pub fn split_snips<T: Clone>(
    registry: &Registry<T>,
    snips_task: &str,
) -> Result<(Registry<T>, Registry<T>)> {
    let present = registry.intents(snips_task)?;
    for intent in SNIPS_TRAIN_INTENTS.iter().chain(&SNIPS_TEST_INTENTS) {
        if !present.contains(intent) {
            return Err(CorpusError::MissingIntent {
                task: snips_task.to_string(),
                intent: intent.to_string(),
            });
        }
    }
    let train = registry.filtered(|t, i| t == snips_task && SNIPS_TRAIN_INTENTS.contains(&i));
    let test = registry.filtered(|t, i| t == snips_task && SNIPS_TEST_INTENTS.contains(&i));
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(text: &str, intent: &str, task: &str, split: Split) -> Utterance {
        Utterance::new(text, intent, task, split).unwrap()
    }

    fn snips_like() -> TaskRegistry {
        let mut reg = TaskRegistry::new();
        for intent in SNIPS_TRAIN_INTENTS.iter().chain(&SNIPS_TEST_INTENTS) {
            reg.push(
                "snips",
                intent,
                Split::Train,
                utt("sample text", intent, "snips", Split::Train),
            );
        }
        reg
    }

    #[test]
    fn split_snips_is_an_exact_disjoint_partition() {
        let reg = snips_like();
        let (train, test) = split_snips(&reg, "snips").unwrap();
        let train_intents = train.intents("snips").unwrap();
        let test_intents = test.intents("snips").unwrap();
        assert_eq!(train_intents.len(), 4);
        assert_eq!(test_intents.len(), 3);
        for i in &train_intents {
            assert!(!test_intents.contains(i));
        }
        let mut union: Vec<&str> = train_intents.into_iter().chain(test_intents).collect();
        union.sort_unstable();
        let mut all: Vec<&str> = SNIPS_TRAIN_INTENTS
            .iter()
            .chain(&SNIPS_TEST_INTENTS)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(union, all);
    }

    #[test]
    fn split_snips_rejects_missing_intent() {
        let mut reg = snips_like();
        let pruned = reg.filtered(|_, i| i != "GetWeather");
        reg = pruned;
        let err = split_snips(&reg, "snips").unwrap_err();
        assert!(err.to_string().contains("GetWeather"));
    }

    #[test]
    fn min_utterance_filter_boundary() {
        let mut reg = TaskRegistry::new();
        for intent in ["a", "b"] {
            for i in 0..19 {
                reg.push(
                    "t",
                    intent,
                    Split::Train,
                    utt(&format!("u {i}"), intent, "t", Split::Train),
                );
            }
        }
        let warnings = reg.filter_min_utterances(&["t".to_string()], 20);
        assert!(reg.is_empty());
        assert_eq!(warnings.len(), 3); // two intents + the task
    }

    #[test]
    fn filter_counts_across_splits() {
        let mut reg = TaskRegistry::new();
        for intent in ["a", "b"] {
            for i in 0..10 {
                reg.push("t", intent, Split::Train, utt(&format!("u {i}"), intent, "t", Split::Train));
                reg.push(
                    "t",
                    intent,
                    Split::Validation,
                    utt(&format!("v {i}"), intent, "t", Split::Validation),
                );
            }
        }
        let warnings = reg.filter_min_utterances(&["t".to_string()], 20);
        assert!(warnings.is_empty());
        assert_eq!(reg.total_intents(), 2);
    }
}
