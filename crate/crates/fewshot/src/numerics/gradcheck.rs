//! Central finite-difference verification of reverse-mode gradients.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NumericsError, ParameterSet, Result, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Relative-error tolerance for `passed`.
    pub tol: f64,
    /// Cap on checked elements per parameter; `None` checks every element.
    pub max_elements_per_param: Option<usize>,
    /// Seed for element subsampling when a cap is set.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-4,
            tol: 1e-4,
            max_elements_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub elements_checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: BTreeMap<String, ParamCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares the reverse-mode gradient of `loss_fn` against central finite
/// differences `(f(θ+h) − f(θ−h)) / 2h`, elementwise over every trainable
/// parameter.
///
/// `loss_fn` must return the scalar loss and its analytic gradients; it is
/// evaluated twice up front and rejected if the two losses differ (dropout
/// must be in eval mode or seed-pinned).
pub fn grad_check<F>(loss_fn: F, params: &ParameterSet, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&ParameterSet) -> Result<(f64, BTreeMap<String, Tensor>)>,
{
    let (loss_a, analytic) = loss_fn(params)?;
    let (loss_b, _) = loss_fn(params)?;
    if loss_a.to_bits() != loss_b.to_bits() {
        return Err(NumericsError::NonDeterministicLoss {
            first: loss_a,
            second: loss_b,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut per_param = BTreeMap::new();
    let mut max_rel = 0.0_f64;
    for name in params.trainable_names() {
        let n = params.value(&name)?.len();
        let mut indices: Vec<usize> = (0..n).collect();
        if let Some(cap) = cfg.max_elements_per_param {
            if cap < n {
                indices.shuffle(&mut rng);
                indices.truncate(cap);
                indices.sort_unstable();
            }
        }
        let analytic_t = analytic
            .get(&name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params.value(&name).unwrap().shape().to_vec()));
        let mut check = ParamCheck {
            max_rel_error: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
            elements_checked: indices.len(),
        };
        for idx in indices {
            let mut perturbed = params.clone();
            let bump = |delta: f64, target: &mut ParameterSet| -> Result<f64> {
                let mut v = target.value(&name)?.clone();
                v.data_mut()[idx] += delta;
                target.set_value(&name, v)?;
                let (loss, _) = loss_fn(target)?;
                Ok(loss)
            };
            let plus = bump(cfg.h, &mut perturbed)?;
            let minus = bump(-2.0 * cfg.h, &mut perturbed)?;
            let numeric = (plus - minus) / (2.0 * cfg.h);
            let a = analytic_t.data()[idx];
            let rel = relative_error(a, numeric);
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_index = idx;
                check.worst_analytic = a;
                check.worst_numeric = numeric;
            }
        }
        max_rel = max_rel.max(check.max_rel_error);
        per_param.insert(name, check);
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_error: max_rel,
        tol: cfg.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    #[test]
    fn quadratic_matches_to_roundoff() {
        let mut params = ParameterSet::new();
        params.insert("theta", Tensor::scalar(3.0), true);
        let loss_fn = |p: &ParameterSet| {
            let mut tape = Tape::new();
            let t = tape.variable(p.value("theta")?.clone());
            let sq = tape.mul(t, t)?;
            let loss = tape.sum_all(sq);
            let grads = tape.backward(loss)?;
            let mut out = BTreeMap::new();
            out.insert("theta".to_string(), grads.get(t).unwrap().clone());
            Ok((tape.value(loss).item()?, out))
        };
        let cfg = GradCheckConfig {
            h: 1e-3,
            ..GradCheckConfig::default()
        };
        let report = grad_check(loss_fn, &params, &cfg).unwrap();
        let check = &report.per_param["theta"];
        assert!((check.worst_analytic - 6.0).abs() < 1e-12);
        assert!(report.max_rel_error < 1e-7, "rel = {}", report.max_rel_error);
        assert!(report.passed());
    }

    #[test]
    fn constant_loss_gives_zero_both_ways() {
        let mut params = ParameterSet::new();
        params.insert("theta", Tensor::scalar(1.0), true);
        let loss_fn = |_: &ParameterSet| Ok((2.5, BTreeMap::new()));
        let report = grad_check(loss_fn, &params, &GradCheckConfig::default()).unwrap();
        let check = &report.per_param["theta"];
        assert_eq!(check.worst_analytic, 0.0);
        assert!(check.max_rel_error < 1e-9);
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let mut params = ParameterSet::new();
        params.insert("theta", Tensor::scalar(1.0), true);
        let counter = std::cell::Cell::new(0.0);
        let loss_fn = |_: &ParameterSet| {
            counter.set(counter.get() + 1.0);
            Ok((counter.get(), BTreeMap::new()))
        };
        let err = grad_check(loss_fn, &params, &GradCheckConfig::default()).unwrap_err();
        assert!(matches!(err, NumericsError::NonDeterministicLoss { .. }));
    }
}
