use rand::seq::SliceRandom;
use rand::Rng;

use super::{CorpusError, Registry, Result, Split};

/// One sampled task with per-class supports and queries: the unit of
/// meta-training. Supports and queries are drawn with replacement and may
/// overlap or contain duplicates.
#[derive(Debug, Clone)]
pub struct Episode<T> {
    pub task_id: String,
    pub classes: Vec<String>,
    /// `supports[c]` holds k samples of `classes[c]`.
    pub supports: Vec<Vec<T>>,
    /// `queries[c]` holds q samples of `classes[c]`.
    pub queries: Vec<Vec<T>>,
}

impl<T> Episode<T> {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn support_count(&self) -> usize {
        self.supports.iter().map(Vec::len).sum()
    }

    pub fn query_count(&self) -> usize {
        self.queries.iter().map(Vec::len).sum()
    }
}

/// Samples one episode: a task chosen uniformly, every class of that task,
/// and per class `k` supports plus `q` queries drawn uniformly with
/// replacement from the class pool of `split`.
pub fn sample_episode<T: Clone>(
    registry: &Registry<T>,
    rng: &mut impl Rng,
    k: usize,
    q: usize,
    split: Split,
) -> Result<Episode<T>> {
    let tasks = registry.task_ids();
    if tasks.is_empty() {
        return Err(CorpusError::EmptyRegistry);
    }
    let task = tasks.choose(rng).unwrap().to_string();
    let classes: Vec<String> = registry
        .intents(&task)?
        .into_iter()
        .map(str::to_string)
        .collect();
    let mut supports = Vec::with_capacity(classes.len());
    let mut queries = Vec::with_capacity(classes.len());
    for class in &classes {
        let pool = registry.pool(&task, class, split)?;
        if pool.is_empty() {
            return Err(CorpusError::EmptyClass {
                task: task.clone(),
                intent: class.clone(),
            });
        }
        let draw = |rng: &mut dyn rand::RngCore, n: usize| -> Vec<T> {
            (0..n).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect()
        };
        supports.push(draw(rng, k));
        queries.push(draw(rng, q));
    }
    Ok(Episode {
        task_id: task,
        classes,
        supports,
        queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn embedded_registry(tasks: usize, classes: usize, per_class: usize) -> Registry<Vec<f64>> {
        let mut reg = Registry::new();
        for t in 0..tasks {
            for c in 0..classes {
                for i in 0..per_class {
                    reg.push(
                        &format!("task{t}"),
                        &format!("class{c}"),
                        Split::Train,
                        vec![t as f64, c as f64, i as f64],
                    );
                }
            }
        }
        reg
    }

    #[test]
    fn counts_follow_k_and_q() {
        let reg = embedded_registry(1, 7, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ep = sample_episode(&reg, &mut rng, 5, 10, Split::Train).unwrap();
        assert_eq!(ep.num_classes(), 7);
        assert_eq!(ep.support_count(), 35);
        assert_eq!(ep.query_count(), 70);
    }

    #[test]
    fn small_pool_yields_duplicates() {
        let reg = embedded_registry(1, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ep = sample_episode(&reg, &mut rng, 5, 1, Split::Train).unwrap();
        for class_supports in &ep.supports {
            assert_eq!(class_supports.len(), 5);
            let mut seen = class_supports.clone();
            seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
            seen.dedup();
            assert!(seen.len() < 5, "pigeonhole: 5 draws from a pool of 3");
        }
    }

    #[test]
    fn task_choice_is_uniform() {
        let reg = embedded_registry(3, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..10_000 {
            let ep = sample_episode(&reg, &mut rng, 1, 1, Split::Train).unwrap();
            *counts.entry(ep.task_id).or_insert(0usize) += 1;
        }
        for (task, n) in counts {
            assert!(
                (n as i64 - 3333).abs() <= 150,
                "task {task} chosen {n} times"
            );
        }
    }

    #[test]
    fn episode_invariants_hold_over_many_draws() {
        let reg = embedded_registry(2, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let ep = sample_episode(&reg, &mut rng, 3, 2, Split::Train).unwrap();
            assert_eq!(ep.classes.len(), 3);
            for c in 0..ep.classes.len() {
                assert_eq!(ep.supports[c].len(), 3);
                assert_eq!(ep.queries[c].len(), 2);
                // membership: every sampled vector encodes its own task index
                let t: f64 = ep.task_id.strip_prefix("task").unwrap().parse().unwrap();
                for s in ep.supports[c].iter().chain(&ep.queries[c]) {
                    assert_eq!(s[0], t);
                }
            }
        }
    }

    #[test]
    fn empty_registry_is_rejected() {
        let reg: Registry<Vec<f64>> = Registry::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_episode(&reg, &mut rng, 1, 1, Split::Train).is_err());
    }
}
