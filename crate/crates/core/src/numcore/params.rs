use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{GainError, Result};

/// Learning-rate group of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    GazetteerNet,
    Crf,
    Other,
}

/// Index of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub trainable: bool,
    m: Tensor,
    v: Tensor,
    step: u64,
}

impl Param {
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Named parameters with their AdamW moments. Insertion order is stable and
/// is the order used by checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(GainError::Contract(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            group,
            m: Tensor::zeros_like(&value),
            v: Tensor::zeros_like(&value),
            value,
            grad: None,
            trainable: true,
            step: 0,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Sets the trainable flag of every parameter from `pred`.
    pub fn set_trainable(&mut self, pred: impl Fn(&Param) -> bool) {
        for p in &mut self.params {
            p.trainable = pred(p);
        }
    }

    /// Fresh zero gradients for trainable parameters, none for the others.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = p.trainable.then(|| Tensor::zeros_like(&p.value));
        }
    }

    /// Adds `scale · grads` into the stored gradients.
    pub fn accumulate(&mut self, grads: &ParamGrads, scale: f64) -> Result<()> {
        for (i, g) in grads.0.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = &mut self.params[i];
            if !p.trainable {
                continue;
            }
            let slot = p.grad.get_or_insert_with(|| Tensor::zeros_like(&p.value));
            if !slot.same_shape(g) {
                return Err(GainError::Contract(format!("gradient shape mismatch for {}", p.name)));
            }
            for (a, b) in slot.data_mut().iter_mut().zip(g.data()) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    /// Copies every parameter value (no optimizer state).
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(GainError::Contract("snapshot size mismatch".into()));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if !p.value.same_shape(v) {
                return Err(GainError::Contract(format!("snapshot shape mismatch for {}", p.name)));
            }
            p.value = v.clone();
        }
        Ok(())
    }
}

/// Gradients indexed by [`ParamId`]; `None` where a parameter got no gradient.
#[derive(Debug, Clone, Default)]
pub struct ParamGrads(pub Vec<Option<Tensor>>);

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.get(id.0).and_then(Option::as_ref)
    }

    /// Elementwise sum, keeping `self`'s order (deterministic reductions).
    pub fn merge(mut self, other: ParamGrads) -> ParamGrads {
        if self.0.len() < other.0.len() {
            self.0.resize(other.0.len(), None);
        }
        for (slot, g) in self.0.iter_mut().zip(other.0) {
            match (slot.as_mut(), g) {
                (Some(a), Some(b)) => a.add_assign(&b),
                (None, Some(b)) => *slot = Some(b),
                _ => {}
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rates: BTreeMap<ParamGroup, f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> OptimizerConfig {
        OptimizerConfig {
            learning_rates: [
                (ParamGroup::Encoder, 1e-3),
                (ParamGroup::GazetteerNet, 1e-3),
                (ParamGroup::Crf, 1e-2),
                (ParamGroup::Other, 1e-3),
            ]
            .into_iter()
            .collect(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl OptimizerConfig {
    pub fn with_uniform_rate(lr: f64) -> OptimizerConfig {
        let mut cfg = OptimizerConfig::default();
        for v in cfg.learning_rates.values_mut() {
            *v = lr;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        for (g, lr) in &self.learning_rates {
            if !(*lr > 0.0) {
                return Err(GainError::Config(format!("learning rate for {g:?} must be > 0")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(GainError::Config("betas must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 || self.epsilon <= 0.0 {
            return Err(GainError::Config("weight decay must be ≥ 0 and epsilon > 0".into()));
        }
        Ok(())
    }

    pub fn rate(&self, group: ParamGroup) -> f64 {
        self.learning_rates.get(&group).copied().unwrap_or(1e-3)
    }
}

/// One AdamW update with decoupled weight decay on every trainable parameter,
/// then clears the gradients.
pub fn adamw_step(params: &mut ParamSet, cfg: &OptimizerConfig) -> Result<()> {
    if let Some(p) = params.params.iter().find(|p| p.trainable && p.grad.is_none()) {
        return Err(GainError::Contract(format!("missing gradient for {}", p.name)));
    }
    for p in &mut params.params {
        if !p.trainable {
            p.grad = None;
            continue;
        }
        let grad = p.grad.take().expect("checked above");
        grad.check_finite(&p.name)?;
        p.step += 1;
        let lr = cfg.rate(p.group);
        let t = p.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let decay = 1.0 - lr * cfg.weight_decay;
        let values = p.value.data_mut();
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        for i in 0..values.len() {
            let g = grad.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            values[i] = values[i] * decay - lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        p.value.check_finite(&p.name)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(p: f64, g: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        let id = ps.add("p", ParamGroup::Other, Tensor::scalar(p)).unwrap();
        ps.get_mut(id).grad = Some(Tensor::scalar(g));
        ps
    }

    fn cfg(lr: f64, wd: f64) -> OptimizerConfig {
        let mut c = OptimizerConfig::with_uniform_rate(lr);
        c.weight_decay = wd;
        c
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut ps = scalar_set(0.37, 0.0);
        adamw_step(&mut ps, &cfg(0.1, 0.0)).unwrap();
        assert_eq!(ps.value(ParamId(0)).item(), 0.37);
        assert_eq!(ps.get(ParamId(0)).step(), 1);
        assert!(ps.get(ParamId(0)).grad.is_none());
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the step is lr · g/(|g| + ε).
        let mut ps = scalar_set(1.0, 1.0);
        adamw_step(&mut ps, &cfg(0.1, 0.0)).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((ps.value(ParamId(0)).item() - expected).abs() < 1e-15);
        assert!((ps.value(ParamId(0)).item() - 0.9).abs() < 1e-8);
    }

    #[test]
    fn decoupled_weight_decay_shrinks() {
        let mut ps = scalar_set(2.0, 1e-30);
        adamw_step(&mut ps, &cfg(0.1, 0.01)).unwrap();
        let shrink = 2.0 - ps.value(ParamId(0)).item();
        assert!((shrink - 0.1 * 0.01 * 2.0).abs() < 1e-12, "{shrink}");
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut ps = scalar_set(1.0, 1.0);
        ps.get_mut(ParamId(0)).grad = None;
        assert!(matches!(
            adamw_step(&mut ps, &OptimizerConfig::default()),
            Err(GainError::Contract(_))
        ));
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut ps = scalar_set(1.0, 1.0);
        ps.set_trainable(|_| false);
        adamw_step(&mut ps, &OptimizerConfig::default()).unwrap();
        assert_eq!(ps.value(ParamId(0)).item(), 1.0);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::new();
        ps.add("a", ParamGroup::Other, Tensor::scalar(0.0)).unwrap();
        assert!(ps.add("a", ParamGroup::Other, Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn invalid_config() {
        let mut c = OptimizerConfig::default();
        c.learning_rates.insert(ParamGroup::Crf, 0.0);
        assert!(c.validate().is_err());
        assert!(OptimizerConfig::default().validate().is_ok());
    }
}
