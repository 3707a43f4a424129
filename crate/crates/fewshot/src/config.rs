//! Run configuration: one JSON document drives data preparation, training,
//! and evaluation. Every key is validated before any work starts, and the
//! resolved configuration is embedded verbatim in evaluation reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::corpus::{Source, TaskRegistry, SNIPS_TEST_INTENTS};
use crate::encoder::EncoderConfig;
use crate::eval::TrialConfig;
use crate::protonet::ProtoHeadConfig;
use crate::train::{ConvTlConfig, TrainSchedule};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("bad override {0:?}: expected key=value")]
    Override(String),
    #[error("config validation: {0}")]
    Validation(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMethod {
    Protonet,
    Convtl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntentRegime {
    Seen,
    Unseen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Single,
    Multi,
}

/// One source corpus entry for `prepare-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase", deny_unknown_fields)]
pub enum SourceConfig {
    Unified {
        files: Vec<PathBuf>,
    },
    Snips {
        task: String,
        dir: PathBuf,
    },
    Tsv {
        task: String,
        #[serde(default)]
        train: Vec<PathBuf>,
        #[serde(default)]
        validation: Vec<PathBuf>,
        #[serde(default = "default_true")]
        filtered: bool,
    },
    Top {
        task: String,
        #[serde(default)]
        train: Vec<PathBuf>,
        #[serde(default)]
        validation: Vec<PathBuf>,
        #[serde(default = "default_true")]
        filtered: bool,
    },
}

fn default_true() -> bool {
    true
}

impl SourceConfig {
    pub fn to_source(&self) -> Source {
        match self {
            SourceConfig::Unified { files } => Source::Unified { files: files.clone() },
            SourceConfig::Snips { task, dir } => Source::Snips {
                task_id: task.clone(),
                dir: dir.clone(),
            },
            SourceConfig::Tsv {
                task,
                train,
                validation,
                filtered,
            } => Source::Tsv {
                task_id: task.clone(),
                train: train.clone(),
                validation: validation.clone(),
                filtered: *filtered,
            },
            SourceConfig::Top {
                task,
                train,
                validation,
                filtered,
            } => Source::Top {
                task_id: task.clone(),
                train: train.clone(),
                validation: validation.clone(),
                filtered: *filtered,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepareConfig {
    pub sources: Vec<SourceConfig>,
    pub output_dir: PathBuf,
}

fn default_test_intents() -> Vec<String> {
    SNIPS_TEST_INTENTS.iter().map(|s| s.to_string()).collect()
}

fn default_test_task() -> String {
    "snips".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub method: TrainMethod,
    pub regime: IntentRegime,
    pub task_mode: TaskMode,
    /// Unified JSON-lines corpus files consumed by train/evaluate.
    #[serde(default)]
    pub corpora: Vec<PathBuf>,
    #[serde(default = "default_test_task")]
    pub test_task: String,
    #[serde(default = "default_test_intents")]
    pub test_intents: Vec<String>,
    #[serde(default)]
    pub word_vectors: Option<PathBuf>,
    #[serde(default)]
    pub char_alphabet: Option<PathBuf>,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub proto_head: ProtoHeadConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub convtl: ConvTlConfig,
    #[serde(default)]
    pub evaluation: TrialConfig,
    /// Evaluate this checkpoint instead of the schedule's final one.
    #[serde(default)]
    pub eval_checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub prepare: Option<PrepareConfig>,
}

impl RunConfig {
    /// Structural checks that need no corpus data. Fail-fast: called before
    /// any side effect.
    pub fn validate(&self) -> Result<()> {
        if ![5, 10].contains(&self.schedule.k) {
            return Err(ConfigError::Validation(format!(
                "schedule.k = {} but meta-training uses k in {{5, 10}}",
                self.schedule.k
            )));
        }
        if self.schedule.q != 10 {
            return Err(ConfigError::Validation(format!(
                "schedule.q = {} but meta-training uses q = 10",
                self.schedule.q
            )));
        }
        self.augment
            .validate()
            .map_err(ConfigError::Validation)?;
        self.evaluation
            .validate()
            .map_err(ConfigError::Validation)?;
        if self.test_intents.is_empty() {
            return Err(ConfigError::Validation("test_intents is empty".into()));
        }
        if self.proto_head.input_dim != self.encoder.sentence_dim() {
            return Err(ConfigError::Validation(format!(
                "proto_head.input_dim = {} but the encoder produces {}",
                self.proto_head.input_dim,
                self.encoder.sentence_dim()
            )));
        }
        Ok(())
    }

    /// Checks that need the ingested registry: test task/intent presence and
    /// the single/multi task count.
    pub fn validate_against(&self, registry: &TaskRegistry) -> Result<()> {
        let tasks = registry.task_ids();
        if !tasks.contains(&self.test_task.as_str()) {
            return Err(ConfigError::Validation(format!(
                "test task {:?} not among ingested tasks {tasks:?}",
                self.test_task
            )));
        }
        let intents = registry
            .intents(&self.test_task)
            .map_err(|e| ConfigError::Validation(e.to_string()))?;
        let missing: Vec<&String> = self
            .test_intents
            .iter()
            .filter(|i| !intents.contains(&i.as_str()))
            .collect();
        if !missing.is_empty() {
            return Err(ConfigError::Validation(format!(
                "test intents {missing:?} not present in task {:?}",
                self.test_task
            )));
        }
        match self.task_mode {
            TaskMode::Single if registry.num_tasks() != 1 => {
                return Err(ConfigError::Validation(format!(
                    "task_mode = single but {} tasks were ingested: {tasks:?}",
                    registry.num_tasks()
                )));
            }
            TaskMode::Multi if registry.num_tasks() < 2 => {
                return Err(ConfigError::Validation(
                    "task_mode = multi but fewer than 2 tasks were ingested".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// Training view and forbidden-intent set for the configured regime.
    /// Under `unseen` the test intents are removed from the training view
    /// (tasks left with fewer than 2 intents are dropped entirely).
    pub fn training_view(&self, registry: &TaskRegistry) -> (TaskRegistry, crate::train::ForbiddenIntents) {
        let mut forbidden = crate::train::ForbiddenIntents::new();
        match self.regime {
            IntentRegime::Seen => (registry.clone(), forbidden),
            IntentRegime::Unseen => {
                for intent in &self.test_intents {
                    forbidden.insert((self.test_task.clone(), intent.clone()));
                }
                let view = registry.filtered(|task, intent| {
                    !(task == self.test_task && self.test_intents.iter().any(|i| i == intent))
                });
                let view = drop_degenerate_tasks(view);
                (view, forbidden)
            }
        }
    }

    /// Test view: the test task restricted to the test intents.
    pub fn test_view(&self, registry: &TaskRegistry) -> TaskRegistry {
        registry.filtered(|task, intent| {
            task == self.test_task && self.test_intents.iter().any(|i| i == intent)
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn drop_degenerate_tasks(registry: TaskRegistry) -> TaskRegistry {
    let degenerate: Vec<String> = registry
        .iter_tasks()
        .filter(|(_, intents)| intents.len() < 2)
        .map(|(task, _)| task.clone())
        .collect();
    if degenerate.is_empty() {
        registry
    } else {
        registry.filtered(|task, _| !degenerate.iter().any(|d| d == task))
    }
}

/// Loads a config file and applies `key.path=value` overrides before
/// deserializing, so unknown keys and type errors are caught up front.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let content = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut value: serde_json::Value = serde_json::from_str(&content)?;
    for entry in overrides {
        let (key, raw) = entry
            .split_once('=')
            .ok_or_else(|| ConfigError::Override(entry.clone()))?;
        let parsed = serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
        set_path(&mut value, key, parsed).map_err(ConfigError::Validation)?;
    }
    let config: RunConfig = serde_json::from_value(value)?;
    config.validate()?;
    Ok(config)
}

fn set_path(
    value: &mut serde_json::Value,
    key: &str,
    new: serde_json::Value,
) -> std::result::Result<(), String> {
    let mut cursor = value;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| format!("override path {key:?}: {part:?} is not an object"))?;
        if i == parts.len() - 1 {
            obj.insert(part.to_string(), new);
            return Ok(());
        }
        cursor = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("parts is nonempty")
}
