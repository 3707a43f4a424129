use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NumericsError, Result, Tensor};

/// One named parameter with its trainable flag and Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub trainable: bool,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step: u64,
}

impl Parameter {
    fn new(value: Tensor, trainable: bool) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            value,
            trainable,
            first_moment: Tensor::zeros(shape.clone()),
            second_moment: Tensor::zeros(shape),
            step: 0,
        }
    }
}

/// Adam hyperparameters. Defaults follow the training setup used throughout:
/// lr 0.001, beta1 0.9, beta2 0.99, epsilon 1e-8.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
        }
    }
}

/// Named parameters with per-parameter Adam state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    params: BTreeMap<String, Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) {
        self.params.insert(name.into(), Parameter::new(value, trainable));
    }

    pub fn insert_parameter(&mut self, name: impl Into<String>, p: Parameter) {
        self.params.insert(name.into(), p);
    }

    pub fn remove(&mut self, name: &str) -> Option<Parameter> {
        self.params.remove(name)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "set_value",
                left: p.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    /// Marks every parameter whose name starts with `prefix` as frozen.
    /// Idempotent; the optimizer leaves frozen parameters bit-identical.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = false;
            }
        }
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// One Adam step with bias correction.
    ///
    /// Every gradient name must exist; gradients for frozen parameters are
    /// ignored and those parameters (value, moments, step) are left untouched.
    pub fn adam_step(&mut self, gradients: &BTreeMap<String, Tensor>, cfg: &AdamConfig) -> Result<()> {
        for (name, g) in gradients {
            let p = self
                .params
                .get(name)
                .ok_or_else(|| NumericsError::UnknownGradient(name.clone()))?;
            if p.value.shape() != g.shape() {
                return Err(NumericsError::GradientShape {
                    name: name.clone(),
                    param: p.value.shape().to_vec(),
                    grad: g.shape().to_vec(),
                });
            }
        }
        for (name, g) in gradients {
            let p = self.params.get_mut(name).expect("validated above");
            if !p.trainable {
                continue;
            }
            p.step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(p.step as i32);
            let bc2 = 1.0 - cfg.beta2.powi(p.step as i32);
            let m = p.first_moment.data_mut();
            for (mi, gi) in m.iter_mut().zip(g.data()) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            }
            let v = p.second_moment.data_mut();
            for (vi, gi) in v.iter_mut().zip(g.data()) {
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            }
            let (m, v) = (p.first_moment.data(), p.second_moment.data());
            let mut values = p.value.data().to_vec();
            for i in 0..values.len() {
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
            p.value = Tensor::new(p.value.shape().to_vec(), values)?;
        }
        Ok(())
    }
}
