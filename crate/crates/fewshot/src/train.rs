//! Training orchestration: the episodic meta-training loop with its
//! two-phase schedule (encoder + head first, then a frozen encoder with the
//! generator and head trained together), and the conventional
//! transfer-learning baseline (cross-entropy pretraining plus
//! softmax-replacement fine-tuning).

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{build_class_prototypes, AugmentConfig, AugmentMethod, Hallucinator};
use crate::corpus::{sample_episode, CorpusError, Registry, Split};
use crate::encoder::Embedder;
use crate::numerics::{
    bind_params, init, load_checkpoint, save_checkpoint, AdamConfig, Mode, NodeId, NumericsError,
    ParameterSet, Tape, Tensor,
};
use crate::protonet::{episode_loss, ProtoHead};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("episode {episode}: non-finite loss {loss}; aborting")]
    NonFiniteLoss { episode: u64, loss: f64 },
    #[error("episode sampled forbidden test intent {intent:?} of task {task:?}")]
    IntentLeak { task: String, intent: String },
    #[error("identity initialization check failed: {0}")]
    IdentityInit(String),
    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Two-phase episodic schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub phase1_episodes: u64,
    pub phase2_episodes: u64,
    /// Supports per class during meta-training.
    pub k: usize,
    /// Queries per class during meta-training.
    pub q: usize,
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            phase1_episodes: 20_000,
            phase2_episodes: 20_000,
            k: 5,
            q: 10,
            adam: AdamConfig::default(),
            checkpoint_every: 1000,
            log_every: 100,
        }
    }
}

/// Per-episode RNG derived from (seed, phase, episode): resuming from a
/// checkpoint replays the identical stream an uninterrupted run would see.
pub fn episode_rng(seed: u64, phase: u32, episode: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[0..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..12].copy_from_slice(&phase.to_le_bytes());
    bytes[12..20].copy_from_slice(&episode.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

/// Intents that must never appear in a sampled episode (the unseen-intent
/// regime contract).
pub type ForbiddenIntents = BTreeSet<(String, String)>;

/// One episodic step: sample a task episode, embed supports and queries,
/// build (optionally augmented) prototypes, take the episodic loss, and
/// apply one Adam update to every trainable parameter. Returns the loss.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<T: Clone>(
    registry: &Registry<T>,
    params: &mut ParameterSet,
    embedder: &dyn Embedder<T>,
    head: &ProtoHead,
    augment: &AugmentConfig,
    schedule: &TrainSchedule,
    episode_number: u64,
    forbidden: &ForbiddenIntents,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let episode = sample_episode(registry, rng, schedule.k, schedule.q, Split::Train)?;
    for class in &episode.classes {
        if forbidden.contains(&(episode.task_id.clone(), class.clone())) {
            return Err(TrainError::IntentLeak {
                task: episode.task_id.clone(),
                intent: class.clone(),
            });
        }
    }

    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let mut class_embeddings = Vec::with_capacity(episode.classes.len());
    for class_supports in &episode.supports {
        let mut nodes = Vec::with_capacity(class_supports.len());
        for item in class_supports {
            nodes.push(embedder.embed(&mut tape, &bound, item, Mode::Train, rng)?);
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
    let prototypes = build_class_prototypes(
        &mut tape,
        &bound,
        &class_embeddings,
        augment,
        hallucinator.as_ref(),
        head,
        Mode::Train,
        rng,
    )?;

    let mut queries: Vec<(NodeId, usize)> = Vec::with_capacity(episode.query_count());
    for (ci, class_queries) in episode.queries.iter().enumerate() {
        for item in class_queries {
            let e = embedder.embed(&mut tape, &bound, item, Mode::Train, rng)?;
            let q = head.project(&mut tape, &bound, e, Mode::Train, rng)?;
            queries.push((q, ci));
        }
    }
    let loss_node = episode_loss(&mut tape, &queries, &prototypes, head.cfg.distance)?;
    let loss = tape.value(loss_node).item()?;
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            episode: episode_number,
            loss,
        });
    }
    let grads = tape.backward(loss_node)?;
    let named = bound.collect_gradients(&grads, params);
    params.adam_step(&named, &schedule.adam)?;
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct MetaTrainOutput {
    pub phase1_checkpoint: PathBuf,
    pub phase2_checkpoint: Option<PathBuf>,
    pub loss_log: PathBuf,
}

/// Verifies in place that the freshly initialized generator maps a
/// nonnegative probe to itself under zero noise.
fn verify_identity_init(params: &ParameterSet, dim: usize, dropout: f64) -> Result<()> {
    let hallucinator = Hallucinator::new(dim, dropout);
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let probe: Vec<f64> = (0..dim).map(|i| (i % 7) as f64 / 7.0).collect();
    let u = tape.constant(Tensor::from_vec(probe.clone()));
    let z = tape.constant(Tensor::zeros(vec![dim]));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = hallucinator
        .hallucinate(&mut tape, &bound, u, z, Mode::Eval, &mut rng)
        .map_err(|e| TrainError::IdentityInit(e.to_string()))?;
    for (got, want) in tape.value(out).data().iter().zip(&probe) {
        if (got - want).abs() > 1e-12 {
            return Err(TrainError::IdentityInit(format!(
                "G(u, 0) produced {got} where {want} was expected"
            )));
        }
    }
    Ok(())
}

struct LossLog {
    path: PathBuf,
    entries: Vec<(u64, f64)>,
}

impl LossLog {
    /// Opens the log, discarding entries past `keep_up_to` (resume support).
    fn open(path: PathBuf, keep_up_to: u64) -> Result<Self> {
        let mut entries = Vec::new();
        if path.exists() {
            let content = fs::read_to_string(&path).map_err(io_err(&path))?;
            for line in content.lines() {
                let mut cols = line.split('\t');
                let (Some(ep), Some(loss)) = (cols.next(), cols.next()) else {
                    continue;
                };
                let (Ok(ep), Ok(loss)) = (ep.parse::<u64>(), loss.parse::<f64>()) else {
                    continue;
                };
                if ep <= keep_up_to {
                    entries.push((ep, loss));
                }
            }
        }
        let log = LossLog { path, entries };
        log.flush()?;
        Ok(log)
    }

    fn append(&mut self, episode: u64, loss: f64) -> Result<()> {
        self.entries.push((episode, loss));
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        writeln!(f, "{episode}\t{loss}").map_err(io_err(&self.path))?;
        Ok(())
    }

    fn flush(&self) -> Result<()> {
        let mut content = String::new();
        for (ep, loss) in &self.entries {
            content.push_str(&format!("{ep}\t{loss}\n"));
        }
        fs::write(&self.path, content).map_err(io_err(&self.path))
    }
}

fn find_resume_checkpoint(dir: &Path, phase: u32, every: u64, total: u64) -> Option<(u64, PathBuf)> {
    if every == 0 {
        return None;
    }
    let mut best: Option<(u64, PathBuf)> = None;
    let mut episode = every;
    while episode <= total {
        let path = dir.join(format!("phase{phase}_ep{episode:06}.ckpt"));
        if path.exists() {
            best = Some((episode, path));
        }
        episode += every;
    }
    best
}

/// Runs the two-phase meta-training schedule.
///
/// Phase 1 trains everything bound so far (encoder and head) for
/// `phase1_episodes` without augmentation and writes `phase1.ckpt`. When the
/// augmentation method is not `none`, phase 2 freezes the encoder,
/// identity-initializes the generator (hallucination only), and trains for
/// `phase2_episodes` more, writing `phase2.ckpt`. Interrupted runs resume
/// from the most recent periodic checkpoint.
#[allow(clippy::too_many_arguments)]
pub fn meta_train<T: Clone>(
    registry: &Registry<T>,
    embedder: &dyn Embedder<T>,
    head: &ProtoHead,
    initial_params: ParameterSet,
    augment: &AugmentConfig,
    schedule: &TrainSchedule,
    seed: u64,
    output_dir: &Path,
    forbidden: &ForbiddenIntents,
) -> Result<MetaTrainOutput> {
    fs::create_dir_all(output_dir).map_err(io_err(output_dir))?;
    let phase1_path = output_dir.join("phase1.ckpt");
    let phase2_path = output_dir.join("phase2.ckpt");
    let log_path = output_dir.join("loss.log");
    let no_augment = AugmentConfig {
        method: AugmentMethod::None,
        ..augment.clone()
    };

    // ----- phase 1 -----
    let mut params;
    if phase1_path.exists() {
        params = load_checkpoint(&phase1_path)?;
        if !log_path.exists() {
            fs::write(&log_path, "").map_err(io_err(&log_path))?;
        }
    } else {
        let mut start = 0u64;
        params = initial_params;
        if let Some((episode, ckpt)) =
            find_resume_checkpoint(output_dir, 1, schedule.checkpoint_every, schedule.phase1_episodes)
        {
            params = load_checkpoint(&ckpt)?;
            start = episode;
        }
        let mut log = LossLog::open(log_path.clone(), start)?;
        for episode in (start + 1)..=schedule.phase1_episodes {
            let mut rng = episode_rng(seed, 1, episode);
            let loss = run_episode(
                registry, &mut params, embedder, head, &no_augment, schedule, episode, forbidden,
                &mut rng,
            )?;
            if schedule.log_every > 0 && episode % schedule.log_every == 0 {
                log.append(episode, loss)?;
            }
            if schedule.checkpoint_every > 0 && episode % schedule.checkpoint_every == 0 {
                let path = output_dir.join(format!("phase1_ep{episode:06}.ckpt"));
                save_checkpoint(&path, &params)?;
            }
        }
        save_checkpoint(&phase1_path, &params)?;
    }

    if augment.method == AugmentMethod::None {
        return Ok(MetaTrainOutput {
            phase1_checkpoint: phase1_path,
            phase2_checkpoint: None,
            loss_log: log_path,
        });
    }

    // ----- phase 2: frozen encoder, generator + head -----
    if phase2_path.exists() {
        return Ok(MetaTrainOutput {
            phase1_checkpoint: phase1_path,
            phase2_checkpoint: Some(phase2_path),
            loss_log: log_path,
        });
    }
    let mut start = 0u64;
    let resumed = find_resume_checkpoint(output_dir, 2, schedule.checkpoint_every, schedule.phase2_episodes);
    let hall_dim = augment.space_dim(embedder.dim(), head.cfg.output_dim);
    if let Some((episode, ckpt)) = resumed {
        params = load_checkpoint(&ckpt)?;
        start = episode;
    } else {
        crate::encoder::freeze(&mut params);
        if augment.method == AugmentMethod::Hallucinate {
            let hallucinator = Hallucinator::new(hall_dim, augment.dropout);
            hallucinator.init_params(&mut params, augment.noise_block);
            verify_identity_init(&params, hall_dim, augment.dropout)?;
        }
    }
    let mut log = LossLog::open(log_path.clone(), schedule.phase1_episodes + start)?;
    for episode in (start + 1)..=schedule.phase2_episodes {
        let mut rng = episode_rng(seed, 2, episode);
        let loss = run_episode(
            registry, &mut params, embedder, head, augment, schedule, episode, forbidden, &mut rng,
        )?;
        let global = schedule.phase1_episodes + episode;
        if schedule.log_every > 0 && episode % schedule.log_every == 0 {
            log.append(global, loss)?;
        }
        if schedule.checkpoint_every > 0 && episode % schedule.checkpoint_every == 0 {
            let path = output_dir.join(format!("phase2_ep{episode:06}.ckpt"));
            save_checkpoint(&path, &params)?;
        }
    }
    save_checkpoint(&phase2_path, &params)?;
    Ok(MetaTrainOutput {
        phase1_checkpoint: phase1_path,
        phase2_checkpoint: Some(phase2_path),
        loss_log: log_path,
    })
}

// ──────────────────────────────────────────────────────────────────────
// Conventional transfer learning baseline
// ──────────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvTlConfig {
    pub hidden: usize,
    pub dropout: f64,
    /// Passes over the pooled training utterances.
    pub epochs: usize,
    pub batch_size: usize,
    pub finetune_steps: usize,
    #[serde(flatten)]
    pub adam: AdamConfig,
}

impl Default for ConvTlConfig {
    fn default() -> Self {
        ConvTlConfig {
            hidden: 128,
            dropout: 0.2,
            epochs: 30,
            batch_size: 64,
            finetune_steps: 100,
            adam: AdamConfig::default(),
        }
    }
}

/// Encoder + two dense layers + softmax classification layer sized to the
/// current class list.
pub struct ConvTlModel {
    pub params: ParameterSet,
    pub classes: Vec<(String, String)>,
    pub cfg: ConvTlConfig,
}

impl ConvTlModel {
    fn init_heads(
        params: &mut ParameterSet,
        cfg: &ConvTlConfig,
        input_dim: usize,
        rng: &mut impl Rng,
    ) {
        params.insert(
            "convtl/dense1/weight",
            init::uniform_fan_in(vec![cfg.hidden, input_dim], input_dim, rng),
            true,
        );
        params.insert("convtl/dense1/bias", Tensor::zeros(vec![cfg.hidden]), true);
        params.insert(
            "convtl/dense2/weight",
            init::uniform_fan_in(vec![cfg.hidden, cfg.hidden], cfg.hidden, rng),
            true,
        );
        params.insert("convtl/dense2/bias", Tensor::zeros(vec![cfg.hidden]), true);
    }

    fn init_softmax(params: &mut ParameterSet, cfg: &ConvTlConfig, classes: usize, rng: &mut impl Rng) {
        params.insert(
            "convtl/softmax/weight",
            init::uniform_fan_in(vec![classes, cfg.hidden], cfg.hidden, rng),
            true,
        );
        params.insert("convtl/softmax/bias", Tensor::zeros(vec![classes]), true);
    }

    /// Logits node for one embedded sample.
    fn logits<T: Clone>(
        &self,
        tape: &mut Tape,
        bound: &crate::numerics::BoundParams,
        embedder: &dyn Embedder<T>,
        item: &T,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        let e = embedder.embed(tape, bound, item, mode, rng)?;
        let w1 = bound.id("convtl/dense1/weight")?;
        let b1 = bound.id("convtl/dense1/bias")?;
        let w2 = bound.id("convtl/dense2/weight")?;
        let b2 = bound.id("convtl/dense2/bias")?;
        let ws = bound.id("convtl/softmax/weight")?;
        let bs = bound.id("convtl/softmax/bias")?;
        let mut x = tape.dense(e, w1, b1)?;
        x = tape.relu(x);
        x = tape.dropout(x, self.cfg.dropout, mode, rng)?;
        x = tape.dense(x, w2, b2)?;
        x = tape.relu(x);
        x = tape.dropout(x, self.cfg.dropout, mode, rng)?;
        Ok(tape.dense(x, ws, bs)?)
    }

    /// Softmax class probabilities for one sample (eval mode).
    pub fn predict_proba<T: Clone>(
        &self,
        embedder: &dyn Embedder<T>,
        item: &T,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, &self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = self.logits(&mut tape, &bound, embedder, item, Mode::Eval, &mut rng)?;
        let values = tape.value(logits).data();
        let lse = crate::numerics::ops::log_sum_exp(values);
        Ok(values.iter().map(|v| (v - lse).exp()).collect())
    }

    pub fn predict_class<T: Clone>(&self, embedder: &dyn Embedder<T>, item: &T) -> Result<usize> {
        let proba = self.predict_proba(embedder, item)?;
        let mut best = 0;
        for (i, p) in proba.iter().enumerate() {
            if *p > proba[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Minibatch cross-entropy steps over `(item, class index)` pairs.
    fn train_steps<T: Clone>(
        &mut self,
        data: &[(T, usize)],
        embedder: &dyn Embedder<T>,
        steps: Option<usize>,
        epochs: usize,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut losses = Vec::new();
        let mut steps_done = 0usize;
        'outer: for _ in 0..epochs {
            order.shuffle(rng);
            for batch in order.chunks(batch_size) {
                let mut tape = Tape::new();
                let bound = bind_params(&mut tape, &self.params);
                let mut per_sample = Vec::with_capacity(batch.len());
                for idx in batch {
                    let (item, label) = &data[*idx];
                    let logits = self.logits(&mut tape, &bound, embedder, item, Mode::Train, rng)?;
                    let own = tape.pick(logits, *label)?;
                    let lse = tape.log_sum_exp(logits);
                    let neg = tape.scale(own, -1.0);
                    per_sample.push(tape.add(lse, neg)?);
                }
                let stacked = tape.concat(&per_sample)?;
                let sum = tape.sum_all(stacked);
                let loss_node = tape.scale(sum, 1.0 / per_sample.len() as f64);
                let loss = tape.value(loss_node).item()?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        episode: steps_done as u64,
                        loss,
                    });
                }
                losses.push(loss);
                let grads = tape.backward(loss_node)?;
                let named = bound.collect_gradients(&grads, &self.params);
                self.params.adam_step(&named, &self.cfg.adam)?;
                steps_done += 1;
                if let Some(max) = steps {
                    if steps_done >= max {
                        break 'outer;
                    }
                }
            }
        }
        Ok(losses)
    }
}

/// Cross-entropy pretraining over the pooled train-split utterances of every
/// task in the registry. The class list is the sorted (task, intent) set.
pub fn conv_tl_train<T: Clone>(
    registry: &Registry<T>,
    embedder: &dyn Embedder<T>,
    encoder_params: ParameterSet,
    cfg: ConvTlConfig,
    seed: u64,
) -> Result<ConvTlModel> {
    let mut classes: Vec<(String, String)> = Vec::new();
    for (task, intents) in registry.iter_tasks() {
        for intent in intents.keys() {
            classes.push((task.clone(), intent.clone()));
        }
    }
    classes.sort();
    if classes.len() < 2 {
        return Err(TrainError::Invalid(format!(
            "conv_tl_train needs at least 2 intents, found {}",
            classes.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = encoder_params;
    ConvTlModel::init_heads(&mut params, &cfg, embedder.dim(), &mut rng);
    ConvTlModel::init_softmax(&mut params, &cfg, classes.len(), &mut rng);

    let mut data: Vec<(T, usize)> = Vec::new();
    for (ci, (task, intent)) in classes.iter().enumerate() {
        for item in registry.pool(task, intent, Split::Train)? {
            data.push((item.clone(), ci));
        }
    }
    let mut model = ConvTlModel { params, classes, cfg };
    let (epochs, batch) = (model.cfg.epochs, model.cfg.batch_size);
    model.train_steps(&data, embedder, None, epochs, batch, &mut rng)?;
    Ok(model)
}

/// Replaces the softmax layer (fresh initialization, one output per test
/// class) and fine-tunes every trainable layer on k samples per class.
pub fn conv_tl_finetune<T: Clone>(
    mut model: ConvTlModel,
    registry: &Registry<T>,
    task: &str,
    embedder: &dyn Embedder<T>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ConvTlModel> {
    let intents: Vec<String> = registry.intents(task)?.iter().map(|s| s.to_string()).collect();
    let mut data: Vec<(T, usize)> = Vec::new();
    for (ci, intent) in intents.iter().enumerate() {
        let pool = registry.pool(task, intent, Split::Train)?;
        if pool.len() < k {
            return Err(TrainError::Invalid(format!(
                "class {intent:?} has {} < k = {k} train samples",
                pool.len()
            )));
        }
        let picked = rand::seq::index::sample(rng, pool.len(), k).into_vec();
        for idx in picked {
            data.push((pool[idx].clone(), ci));
        }
    }
    model.params.remove("convtl/softmax/weight");
    model.params.remove("convtl/softmax/bias");
    let cfg = model.cfg.clone();
    ConvTlModel::init_softmax(&mut model.params, &cfg, intents.len(), rng);
    model.classes = intents.iter().map(|i| (task.to_string(), i.clone())).collect();
    let steps = cfg.finetune_steps;
    let batch = cfg.batch_size.min(16).min(data.len().max(1));
    if steps > 0 {
        model.train_steps(&data, embedder, Some(steps), usize::MAX, batch, rng)?;
    }
    Ok(model)
}
