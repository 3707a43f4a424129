//! k-shot trial harness: repeated support sampling, prediction over
//! validation partitions, micro-F1 with Student-t confidence intervals,
//! report generation, and synthetic Gaussian tasks for desk-scale runs.

use std::collections::BTreeMap;
use std::hash::Hash;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::augment::{build_class_prototypes, AugmentConfig, AugmentMethod, Hallucinator};
use crate::corpus::{CorpusError, Registry, Split};
use crate::encoder::Embedder;
use crate::numerics::{bind_params, Mode, NumericsError, ParameterSet, Tape};
use crate::protonet::{predict, ProtoHead, Prototype};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("task {task:?}: insufficient supports for k={k}: {counts:?}")]
    InsufficientSupports {
        task: String,
        k: usize,
        counts: Vec<(String, usize)>,
    },
    #[error("prediction/gold length mismatch: {pred} vs {gold}")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("empty prediction list")]
    EmptyPredictions,
    #[error("confidence interval needs at least 2 scores, got {0}")]
    TooFewScores(usize),
    #[error("report validation: {0}")]
    Report(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Trial protocol settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialConfig {
    pub trials: usize,
    pub k: usize,
    pub seed_base: u64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            trials: 20,
            k: 5,
            seed_base: 1000,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.trials < 2 {
            return Err(format!("trials = {} but the CI needs at least 2", self.trials));
        }
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        Ok(())
    }
}

/// Micro-averaged F1 over classes from globally aggregated counts. For
/// single-label multiclass this equals plain accuracy; both computations are
/// performed and must agree.
pub fn micro_f1<C: Eq + Hash + Clone>(predictions: &[C], gold: &[C]) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            pred: predictions.len(),
            gold: gold.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    let mut tp = 0usize;
    let mut fp: std::collections::HashMap<&C, usize> = std::collections::HashMap::new();
    let mut fnn: std::collections::HashMap<&C, usize> = std::collections::HashMap::new();
    for (p, g) in predictions.iter().zip(gold) {
        if p == g {
            tp += 1;
        } else {
            *fp.entry(p).or_insert(0) += 1;
            *fnn.entry(g).or_insert(0) += 1;
        }
    }
    let fp_total: usize = fp.values().sum();
    let fn_total: usize = fnn.values().sum();
    let f1 = 2.0 * tp as f64 / (2.0 * tp as f64 + fp_total as f64 + fn_total as f64);
    let accuracy = tp as f64 / predictions.len() as f64;
    debug_assert!((f1 - accuracy).abs() < 1e-12);
    assert!(
        (f1 - accuracy).abs() < 1e-12,
        "micro-F1 {f1} diverged from accuracy {accuracy} on single-label input"
    );
    Ok(f1)
}

/// Student-t 95% half-width: t(0.975, n-1) × sample std / sqrt(n).
pub fn confidence_interval(scores: &[f64]) -> Result<f64> {
    let n = scores.len();
    if n < 2 {
        return Err(EvalError::TooFewScores(n));
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("valid dof")
        .inverse_cdf(0.975);
    Ok(t * std / (n as f64).sqrt())
}

/// One k-shot trial: k supports per class sampled without replacement from
/// the train partitions, prototypes (optionally augmented), and predictions
/// over every validation utterance of the given task. Returns micro-F1 in
/// [0, 1].
#[allow(clippy::too_many_arguments)]
pub fn run_trial<T: Clone>(
    params: &ParameterSet,
    registry: &Registry<T>,
    task: &str,
    embedder: &dyn Embedder<T>,
    head: &ProtoHead,
    augment: &AugmentConfig,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let classes: Vec<String> = registry.intents(task)?.iter().map(|s| s.to_string()).collect();

    // supports: without replacement within a trial
    let mut insufficient = Vec::new();
    for class in &classes {
        let n = registry.pool(task, class, Split::Train)?.len();
        if n < k {
            insufficient.push((class.clone(), n));
        }
    }
    if !insufficient.is_empty() {
        return Err(EvalError::InsufficientSupports {
            task: task.to_string(),
            k,
            counts: insufficient,
        });
    }

    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let mut class_embeddings = Vec::with_capacity(classes.len());
    for class in &classes {
        let pool = registry.pool(task, class, Split::Train)?;
        let picked = sample_indices(rng, pool.len(), k).into_vec();
        let mut nodes = Vec::with_capacity(k);
        for idx in picked {
            nodes.push(embedder.embed(&mut tape, &bound, &pool[idx], Mode::Eval, rng)?);
        }
        class_embeddings.push(nodes);
    }

    let hallucinator = if augment.method == AugmentMethod::Hallucinate {
        Some(Hallucinator::new(
            augment.space_dim(embedder.dim(), head.cfg.output_dim),
            augment.dropout,
        ))
    } else {
        None
    };
    let proto_nodes = build_class_prototypes(
        &mut tape,
        &bound,
        &class_embeddings,
        augment,
        hallucinator.as_ref(),
        head,
        Mode::Eval,
        rng,
    )?;
    let prototypes: Vec<Prototype> = proto_nodes
        .iter()
        .enumerate()
        .map(|(i, id)| Prototype {
            class_index: i,
            vector: tape.value(*id).data().to_vec(),
            support_count: k,
        })
        .collect();

    let mut predictions = Vec::new();
    let mut gold = Vec::new();
    for (ci, class) in classes.iter().enumerate() {
        for item in registry.pool(task, class, Split::Validation)? {
            let e = embedder.embed(&mut tape, &bound, item, Mode::Eval, rng)?;
            let q = head.project(&mut tape, &bound, e, Mode::Eval, rng)?;
            let pred = predict(tape.value(q).data(), &prototypes, head.cfg.distance)?;
            predictions.push(pred);
            gold.push(ci);
        }
    }
    micro_f1(&predictions, &gold)
}

/// Per-configuration evaluation result: micro-F1 mean (%) with its 95%
/// confidence half-width over the trial scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub space: String,
    pub k: usize,
    pub mean: f64,
    pub ci_half_width: f64,
    pub trial_scores: Vec<f64>,
    pub seed_base: u64,
    pub config: serde_json::Value,
    pub config_digest: String,
}

pub fn config_digest(config: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(config).unwrap_or_default();
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs `trials` independent trials (trial i seeded with `seed_base + i`)
/// and aggregates them into a report. Scores are reported in percent.
#[allow(clippy::too_many_arguments)]
pub fn run_trials<T: Clone>(
    params: &ParameterSet,
    registry: &Registry<T>,
    task: &str,
    embedder: &dyn Embedder<T>,
    head: &ProtoHead,
    augment: &AugmentConfig,
    trial_cfg: &TrialConfig,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let mut scores = Vec::with_capacity(trial_cfg.trials);
    for i in 0..trial_cfg.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_cfg.seed_base + i as u64);
        let f1 = run_trial(params, registry, task, embedder, head, augment, trial_cfg.k, &mut rng)?;
        scores.push(100.0 * f1);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let ci = confidence_interval(&scores)?;
    let digest = config_digest(&config);
    Ok(EvalReport {
        method: format!("{:?}", augment.method).to_lowercase(),
        space: match augment.method {
            AugmentMethod::None => "-".to_string(),
            _ => format!("{:?}", augment.space).to_lowercase(),
        },
        k: trial_cfg.k,
        mean,
        ci_half_width: ci,
        trial_scores: scores,
        seed_base: trial_cfg.seed_base,
        config,
        config_digest: digest,
    })
}

/// Trials for the conventional transfer-learning baseline: every trial
/// fine-tunes a fresh copy of the pretrained model (softmax layer replaced,
/// width = number of test intents) on k samples per class and classifies
/// every validation utterance.
#[allow(clippy::too_many_arguments)]
pub fn run_convtl_trials<T: Clone>(
    pretrained: &ParameterSet,
    convtl_cfg: &crate::train::ConvTlConfig,
    registry: &Registry<T>,
    task: &str,
    embedder: &dyn Embedder<T>,
    trial_cfg: &TrialConfig,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let mut scores = Vec::with_capacity(trial_cfg.trials);
    for i in 0..trial_cfg.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_cfg.seed_base + i as u64);
        let model = crate::train::ConvTlModel {
            params: pretrained.clone(),
            classes: Vec::new(),
            cfg: convtl_cfg.clone(),
        };
        let tuned = crate::train::conv_tl_finetune(model, registry, task, embedder, trial_cfg.k, &mut rng)
            .map_err(|e| EvalError::Report(format!("fine-tune failed: {e}")))?;
        let classes: Vec<String> = registry.intents(task)?.iter().map(|s| s.to_string()).collect();
        let mut predictions = Vec::new();
        let mut gold = Vec::new();
        for (ci, class) in classes.iter().enumerate() {
            for item in registry.pool(task, class, Split::Validation)? {
                predictions.push(
                    tuned
                        .predict_class(embedder, item)
                        .map_err(|e| EvalError::Report(e.to_string()))?,
                );
                gold.push(ci);
            }
        }
        scores.push(100.0 * micro_f1(&predictions, &gold)?);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let ci = confidence_interval(&scores)?;
    let digest = config_digest(&config);
    Ok(EvalReport {
        method: "convtl".to_string(),
        space: "-".to_string(),
        k: trial_cfg.k,
        mean,
        ci_half_width: ci,
        trial_scores: scores,
        seed_base: trial_cfg.seed_base,
        config,
        config_digest: digest,
    })
}

/// Desk-scale verification substrate: Gaussian clusters per class around
/// random unit-norm means scaled by `separation`, pre-embedded so the text
/// encoder is bypassed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTaskSpec {
    pub num_tasks: usize,
    pub classes: usize,
    pub dim: usize,
    /// Norm of each class mean.
    pub separation: f64,
    pub within_std: f64,
    /// Samples per class, per split (train and validation each get this many).
    pub samples_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            num_tasks: 1,
            classes: 5,
            dim: 16,
            separation: 2.0,
            within_std: 1.0,
            samples_per_class: 50,
            seed: 0,
        }
    }
}

pub fn generate_synthetic_tasks(spec: &SyntheticTaskSpec) -> Registry<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut registry = Registry::new();
    for t in 0..spec.num_tasks {
        let task = format!("synthetic{t}");
        // distinct unit directions, scaled by the configured separation
        let mut directions: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
        while directions.len() < spec.classes {
            let mut d: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-9 {
                continue;
            }
            d.iter_mut().for_each(|v| *v /= norm);
            let distinct = directions.iter().all(|e| {
                e.iter().zip(&d).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() > 1e-12
            });
            if distinct {
                directions.push(d);
            }
        }
        for (c, dir) in directions.iter().enumerate() {
            let mean: Vec<f64> = dir.iter().map(|v| v * spec.separation).collect();
            let intent = format!("class{c}");
            for split in [Split::Train, Split::Validation] {
                for _ in 0..spec.samples_per_class {
                    let sample: Vec<f64> = mean
                        .iter()
                        .map(|m| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            m + spec.within_std * z
                        })
                        .collect();
                    registry.push(&task, &intent, split, sample);
                }
            }
        }
    }
    registry
}

/// Aligned text table: one row per method/space, one column per k, cells
/// formatted "mean ± halfwidth" at two decimals.
pub fn format_report(reports: &[EvalReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(EvalError::Report("no reports to format".into()));
    }
    for r in reports {
        if r.method.is_empty() {
            return Err(EvalError::Report("empty method name".into()));
        }
    }
    let mut ks: Vec<usize> = reports.iter().map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut rows: BTreeMap<String, BTreeMap<usize, String>> = BTreeMap::new();
    for r in reports {
        let label = if r.space == "-" {
            r.method.clone()
        } else {
            format!("{} ({})", r.method, r.space)
        };
        rows.entry(label)
            .or_default()
            .insert(r.k, format!("{:.2} ± {:.2}", r.mean, r.ci_half_width));
    }
    let label_width = rows
        .keys()
        .map(String::len)
        .max()
        .unwrap_or(0)
        .max("method".len());
    let col_width = 16;
    let mut out = String::new();
    out.push_str(&format!("{:label_width$}", "method"));
    for k in &ks {
        out.push_str(&format!(" | {:>col_width$}", format!("{k}-shot")));
    }
    out.push('\n');
    out.push_str(&"-".repeat(label_width + ks.len() * (col_width + 3)));
    out.push('\n');
    for (label, cells) in rows {
        out.push_str(&format!("{label:label_width$}"));
        for k in &ks {
            let cell = cells.get(k).map(String::as_str).unwrap_or("-");
            out.push_str(&format!(" | {cell:>col_width$}"));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Machine-readable companion: one JSON object per report, one per line.
pub fn reports_to_jsonl(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("report serializes"));
        out.push('\n');
    }
    out
}

pub fn reports_from_jsonl(content: &str) -> Result<Vec<EvalReport>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .map_err(|e| EvalError::Report(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
