//! Fast invariant battery behind the `selfcheck` command: gradient checks
//! for every differentiable operation, oracle equivalences, identity
//! initialization, degeneracy properties, and optimizer contracts. Designed
//! to finish well under two minutes.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{Hallucinator, NoiseBlockInit};
use crate::numerics::{
    bind_params, grad_check, AdamConfig, GradCheckConfig, Mode, NodeId, ParameterSet, Tape, Tensor,
};
use crate::protonet::{compute_prototype, episode_loss, posteriors, Distance, ProtoHead, ProtoHeadConfig, Prototype};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Measured error magnitude or other evidence.
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SelfcheckReport {
    pub checks: Vec<CheckResult>,
}

impl SelfcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<42} {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            ));
        }
        out.push_str(&format!(
            "{}: {} checks, {} failed\n",
            if self.passed() { "OK" } else { "FAILED" },
            self.checks.len(),
            self.checks.iter().filter(|c| !c.passed).count()
        ));
        out
    }
}

fn random_tensor(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

type GraphBuilder = dyn Fn(&mut Tape, &BTreeMap<String, NodeId>) -> crate::numerics::Result<NodeId>;

/// Gradient-checks a graph built from named parameters; `corrupt` biases the
/// analytic gradients so the harness demonstrably catches a broken backward
/// pass.
fn check_gradients(
    name: &str,
    params: &ParameterSet,
    build: &GraphBuilder,
    corrupt: bool,
    report: &mut SelfcheckReport,
) {
    let loss_fn = |p: &ParameterSet| {
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, p);
        let ids: BTreeMap<String, NodeId> = p
            .names()
            .map(|n| (n.clone(), bound.id(n).unwrap()))
            .collect();
        let loss = build(&mut tape, &ids)?;
        let grads = tape.backward(loss)?;
        let mut named = bound.collect_gradients(&grads, p);
        if corrupt {
            for g in named.values_mut() {
                let mut data = g.data().to_vec();
                for v in &mut data {
                    *v += 0.5;
                }
                *g = Tensor::new(g.shape().to_vec(), data).unwrap();
            }
        }
        Ok((tape.value(loss).item()?, named))
    };
    let cfg = GradCheckConfig::default();
    match grad_check(loss_fn, params, &cfg) {
        Ok(r) => report.checks.push(CheckResult {
            name: format!("gradient/{name}"),
            passed: r.passed(),
            detail: format!("max_rel_error={:.3e} (tol {:.0e})", r.max_rel_error, r.tol),
        }),
        Err(e) => report.checks.push(CheckResult {
            name: format!("gradient/{name}"),
            passed: false,
            detail: e.to_string(),
        }),
    }
}

/// Runs the battery. `corrupt` names an operation whose analytic gradient is
/// deliberately biased before comparison (a harness test hook): the
/// corresponding check must then fail, naming the operation.
pub fn run(corrupt: Option<&str>) -> SelfcheckReport {
    let mut report = SelfcheckReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_501);

    // ---- per-operation gradient checks ----
    let corrupted = |op: &str| corrupt == Some(op);

    {
        let mut p = ParameterSet::new();
        p.insert("x", random_tensor(vec![3, 4], &mut rng), true);
        p.insert("w", random_tensor(vec![5, 4], &mut rng), true);
        p.insert("b", random_tensor(vec![5], &mut rng), true);
        check_gradients(
            "dense_forward",
            &p,
            &|tape, ids| {
                let y = tape.dense(ids["x"], ids["w"], ids["b"])?;
                Ok(tape.sum_all(y))
            },
            corrupted("dense_forward"),
            &mut report,
        );
    }
    {
        let mut p = ParameterSet::new();
        // keep values away from the ReLU kink so central differences are clean
        let mut t = random_tensor(vec![8], &mut rng);
        t.data_mut().iter_mut().for_each(|v| {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        });
        p.insert("x", t, true);
        check_gradients(
            "relu",
            &p,
            &|tape, ids| {
                let y = tape.relu(ids["x"]);
                let sq = tape.mul(y, y)?;
                Ok(tape.sum_all(sq))
            },
            corrupted("relu"),
            &mut report,
        );
    }
    for op in ["sigmoid", "tanh"] {
        let mut p = ParameterSet::new();
        p.insert("x", random_tensor(vec![6], &mut rng), true);
        let op_name = op.to_string();
        check_gradients(
            op,
            &p,
            &move |tape, ids| {
                let y = if op_name == "sigmoid" {
                    tape.sigmoid(ids["x"])
                } else {
                    tape.tanh(ids["x"])
                };
                Ok(tape.sum_all(y))
            },
            corrupted(op),
            &mut report,
        );
    }
    {
        let mut p = ParameterSet::new();
        p.insert("x", random_tensor(vec![7, 3], &mut rng), true);
        p.insert("k", random_tensor(vec![4, 5, 3], &mut rng), true);
        p.insert("b", random_tensor(vec![4], &mut rng), true);
        check_gradients(
            "conv1d_same",
            &p,
            &|tape, ids| {
                let y = tape.conv1d_same(ids["x"], ids["k"], ids["b"])?;
                let sq = tape.mul(y, y)?;
                Ok(tape.sum_all(sq))
            },
            corrupted("conv1d_same"),
            &mut report,
        );
    }
    {
        let mut p = ParameterSet::new();
        p.insert("x", random_tensor(vec![5, 4], &mut rng), true);
        check_gradients(
            "maxpool_stats_pool",
            &p,
            &|tape, ids| {
                let pooled = tape.maxpool_pairs(ids["x"]);
                let mn = tape.min_rows(pooled);
                let mx = tape.max_rows(pooled);
                let mean = tape.mean_rows(pooled);
                let cat = tape.concat(&[mn, mx, mean])?;
                let sq = tape.mul(cat, cat)?;
                Ok(tape.sum_all(sq))
            },
            corrupted("maxpool_stats_pool"),
            &mut report,
        );
    }
    {
        let mut p = ParameterSet::new();
        p.insert("x", random_tensor(vec![6], &mut rng), true);
        check_gradients(
            "slice_concat_logsumexp_pick",
            &p,
            &|tape, ids| {
                let a = tape.slice(ids["x"], 0, 3)?;
                let b = tape.slice(ids["x"], 3, 3)?;
                let cat = tape.concat(&[b, a])?;
                let lse = tape.log_sum_exp(cat);
                let one = tape.pick(ids["x"], 2)?;
                tape.add(lse, one)
            },
            corrupted("slice_concat_logsumexp_pick"),
            &mut report,
        );
    }

    // ---- episode loss gradient (2-class toy, 2-layer head) ----
    {
        let head = ProtoHead::new(ProtoHeadConfig {
            input_dim: 6,
            hidden: 5,
            output_dim: 4,
            ..ProtoHeadConfig::default()
        });
        let mut p = ParameterSet::new();
        head.init_params(&mut p, &mut rng);
        let supports: Vec<Vec<Tensor>> = (0..2)
            .map(|_| (0..3).map(|_| random_tensor(vec![6], &mut rng)).collect())
            .collect();
        let queries: Vec<(Tensor, usize)> = (0..2)
            .flat_map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(c as u64 + 40);
                (0..2)
                    .map(|_| (random_tensor(vec![6], &mut rng), c))
                    .collect::<Vec<_>>()
            })
            .collect();
        let build = move |tape: &mut Tape,
                          ids: &BTreeMap<String, NodeId>|
              -> crate::numerics::Result<NodeId> {
            let mut eval_rng = ChaCha8Rng::seed_from_u64(0);
            let bound = crate::numerics::BoundParams::from_ids(ids.clone());
            let mut protos = Vec::new();
            for class in &supports {
                let ids: crate::numerics::Result<Vec<NodeId>> = class
                    .iter()
                    .map(|s| {
                        let node = tape.constant(s.clone());
                        head.project(tape, &bound, node, Mode::Eval, &mut eval_rng)
                    })
                    .collect();
                protos.push(compute_prototype(tape, &ids?)?);
            }
            let mut qs = Vec::new();
            for (q, c) in &queries {
                let node = tape.constant(q.clone());
                qs.push((head.project(tape, &bound, node, Mode::Eval, &mut eval_rng)?, *c));
            }
            episode_loss(tape, &qs, &protos, Distance::SquaredEuclidean)
        };
        check_gradients("episode_loss", &p, &build, corrupted("episode_loss"), &mut report);
    }

    // ---- adam contracts ----
    {
        let mut params = ParameterSet::new();
        params.insert("theta", Tensor::scalar(0.0), true);
        let cfg = AdamConfig::default();
        let mut grads = BTreeMap::new();
        grads.insert("theta".to_string(), Tensor::scalar(1.0));
        params.adam_step(&grads, &cfg).unwrap();
        let theta = params.value("theta").unwrap().data()[0];
        let err = (theta + cfg.lr).abs();
        report.checks.push(CheckResult {
            name: "adam/first_step_bias_correction".into(),
            passed: err < 1e-8,
            detail: format!("theta={theta:.9}, |theta+lr|={err:.3e}"),
        });

        let mut params = ParameterSet::new();
        params.insert("theta", Tensor::from_vec(vec![1.0, -2.0]), true);
        let before = params.value("theta").unwrap().clone();
        let mut grads = BTreeMap::new();
        grads.insert("theta".to_string(), Tensor::zeros(vec![2]));
        params.adam_step(&grads, &cfg).unwrap();
        let same = *params.value("theta").unwrap() == before;
        report.checks.push(CheckResult {
            name: "adam/zero_gradient_identity".into(),
            passed: same,
            detail: format!("parameters unchanged: {same}"),
        });
    }

    // ---- identity initialization ----
    {
        let h = Hallucinator::new(5, 0.2);
        let mut params = ParameterSet::new();
        h.init_params(&mut params, NoiseBlockInit::Identity);
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, &params);
        let probe = vec![0.0, 0.3, 1.7, 0.0, 2.0];
        let u = tape.constant(Tensor::from_vec(probe.clone()));
        let z = tape.constant(Tensor::zeros(vec![5]));
        let mut eval_rng = ChaCha8Rng::seed_from_u64(0);
        let out = h
            .hallucinate(&mut tape, &bound, u, z, Mode::Eval, &mut eval_rng)
            .unwrap();
        let max_err = tape
            .value(out)
            .data()
            .iter()
            .zip(&probe)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        report.checks.push(CheckResult {
            name: "hallucinator/identity_init".into(),
            passed: max_err == 0.0,
            detail: format!("max |G(u,0) - u| = {max_err:.3e}"),
        });
    }

    // ---- augmented-prototype degeneracy (identity generator, z = 0) ----
    {
        let dim = 4;
        let head = ProtoHead::new(ProtoHeadConfig {
            input_dim: dim,
            hidden: dim,
            output_dim: dim,
            ..ProtoHeadConfig::default()
        });
        let mut params = ParameterSet::new();
        params.insert("protonet/dense1/weight", crate::numerics::init::identity(dim), true);
        params.insert("protonet/dense1/bias", Tensor::zeros(vec![dim]), true);
        params.insert("protonet/dense2/weight", crate::numerics::init::identity(dim), true);
        params.insert("protonet/dense2/bias", Tensor::zeros(vec![dim]), true);
        let h = Hallucinator::new(dim, 0.2);
        h.init_params(&mut params, NoiseBlockInit::Zero);
        let embeddings: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let subset = vec![1usize, 4];
        let mut worst = 0.0f64;
        for sentence_space in [true, false] {
            let mut tape = Tape::new();
            let bound = bind_params(&mut tape, &params);
            let nodes: Vec<NodeId> = embeddings
                .iter()
                .map(|e| tape.constant(Tensor::from_vec(e.clone())))
                .collect();
            let mut eval_rng = ChaCha8Rng::seed_from_u64(1);
            let proto = if sentence_space {
                crate::augment::augmented_prototype_sentence(
                    &mut tape, &bound, &nodes, &subset, &h, &head, Mode::Eval, &mut eval_rng,
                )
                .unwrap()
            } else {
                crate::augment::augmented_prototype_proto(
                    &mut tape, &bound, &nodes, &subset, &h, &head, Mode::Eval, &mut eval_rng,
                )
                .unwrap()
            };
            for d in 0..dim {
                let mut acc = 0.0;
                for e in &embeddings {
                    acc += e[d];
                }
                for j in &subset {
                    acc += embeddings[*j][d];
                }
                let want = acc / (embeddings.len() + subset.len()) as f64;
                worst = worst.max((tape.value(proto).data()[d] - want).abs());
            }
        }
        report.checks.push(CheckResult {
            name: "augment/identity_degenerates_to_weighted_mean".into(),
            passed: worst < 1e-10,
            detail: format!("max deviation {worst:.3e}"),
        });
    }

    // ---- posteriors sum to one ----
    {
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let protos: Vec<Prototype> = (0..4)
                .map(|i| Prototype {
                    class_index: i,
                    support_count: 1,
                    vector: (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect(),
                })
                .collect();
            let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p = posteriors(&q, &protos, Distance::SquaredEuclidean).unwrap();
            worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
            if p.iter().any(|v| *v <= 0.0 || *v > 1.0) {
                worst = f64::INFINITY;
            }
        }
        report.checks.push(CheckResult {
            name: "protonet/posteriors_sum_to_one".into(),
            passed: worst < 1e-6,
            detail: format!("max |sum - 1| = {worst:.3e}"),
        });
    }

    // ---- zero-variance noise augmentation is a no-op ----
    {
        let mut tape = Tape::new();
        let members: Vec<NodeId> = (0..5)
            .map(|_| tape.constant(Tensor::from_vec(vec![1.5, -0.5])))
            .collect();
        let var = vec![0.0, 0.0];
        let mut noise_rng = ChaCha8Rng::seed_from_u64(2);
        let out = crate::augment::noise_augment(&mut tape, &members, &var, 0.2, 0.1, &mut noise_rng).unwrap();
        let passed = out.len() == 6 && tape.value(out[5]).data() == [1.5, -0.5];
        report.checks.push(CheckResult {
            name: "augment/zero_variance_noise_noop".into(),
            passed,
            detail: format!("|S_aug| = {}, synthetic equals original: {passed}", out.len()),
        });
    }

    // ---- augmentation ratio bookkeeping ----
    {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(3);
        let s5 = crate::augment::select_hallucination_subset(5, 0.2, &mut noise_rng).len();
        let s10 = crate::augment::select_hallucination_subset(10, 0.2, &mut noise_rng).len();
        let s1 = crate::augment::select_hallucination_subset(1, 0.2, &mut noise_rng).len();
        let passed = s5 == 1 && s10 == 2 && s1 == 1;
        report.checks.push(CheckResult {
            name: "augment/subset_sizes".into(),
            passed,
            detail: format!("k=5→{s5}, k=10→{s10}, k=1→{s1}"),
        });
    }

    // ---- micro-F1 oracle ----
    {
        let f1 = crate::eval::micro_f1(&["A", "A", "B"], &["A", "B", "B"]).unwrap();
        let passed = (f1 - 2.0 / 3.0).abs() < 1e-12;
        report.checks.push(CheckResult {
            name: "eval/micro_f1_confusion_oracle".into(),
            passed,
            detail: format!("f1 = {f1:.12}"),
        });
    }

    // ---- dropout contracts ----
    {
        let x = random_tensor(vec![64], &mut rng);
        let mut d_rng = ChaCha8Rng::seed_from_u64(4);
        let eval = crate::numerics::ops::dropout(&x, 0.5, Mode::Eval, &mut d_rng).unwrap();
        let p0 = crate::numerics::ops::dropout(&x, 0.0, Mode::Train, &mut d_rng).unwrap();
        let passed = eval == x && p0 == x;
        report.checks.push(CheckResult {
            name: "dropout/eval_and_p0_identity".into(),
            passed,
            detail: format!("identity holds: {passed}"),
        });
    }

    report
}
