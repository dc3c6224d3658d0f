//! Adam with decoupled weight decay.
//!
//! The decay multiplies parameters by `1 - lr * wd` before the adaptive
//! update, so the decay path never interacts with the moment estimates.

use super::Tensor;
use crate::scalar::Scalar;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamConfig { learning_rate, weight_decay, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Slot<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// First/second moment buffers per named parameter, plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    step: u64,
    slots: HashMap<String, Slot<T>>,
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState { step: 0, slots: HashMap::new() }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Advances the shared step counter; call once before updating the
    /// parameter set for one optimization step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies decoupled decay then the bias-corrected Adam update.
    pub fn update(&mut self, cfg: &AdamConfig, name: &str, param: &mut Tensor<T>, grad: &[T]) {
        assert_eq!(param.len(), grad.len(), "gradient shape mismatch for {name}");
        assert!(self.step >= 1, "begin_step must run before update");
        let n = param.len();
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| Slot {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        });
        assert_eq!(slot.m.len(), n, "optimizer slot shape changed for {name}");

        let lr = T::from_f64(cfg.learning_rate);
        let b1 = T::from_f64(cfg.beta1);
        let b2 = T::from_f64(cfg.beta2);
        let eps = T::from_f64(cfg.epsilon);
        let decay = T::one() - lr * T::from_f64(cfg.weight_decay);
        let corr1 = T::from_f64(1.0 - cfg.beta1.powi(self.step as i32));
        let corr2 = T::from_f64(1.0 - cfg.beta2.powi(self.step as i32));

        let data = param.data_mut();
        for i in 0..n {
            data[i] = data[i] * decay;
            slot.m[i] = b1 * slot.m[i] + (T::one() - b1) * grad[i];
            slot.v[i] = b2 * slot.v[i] + (T::one() - b2) * grad[i] * grad[i];
            let m_hat = slot.m[i] / corr1;
            let v_hat = slot.v[i] / corr2;
            data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    /// Deterministic iteration over slots (checkpoint serialization).
    pub fn sorted_slots(&self) -> Vec<(&str, &[T], &[T])> {
        let mut names: Vec<&String> = self.slots.keys().collect();
        names.sort();
        names
            .into_iter()
            .map(|n| {
                let s = &self.slots[n];
                (n.as_str(), s.m.as_slice(), s.v.as_slice())
            })
            .collect()
    }

    pub fn restore_slot(&mut self, name: &str, m: Vec<T>, v: Vec<T>) {
        self.slots.insert(name.to_string(), Slot { m, v });
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }
}
