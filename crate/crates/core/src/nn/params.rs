use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::{Tape, Tensor2, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Named parameter tensors with gradient accumulators and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor2>,
    grads: Vec<Tensor2>,
    first_moment: Vec<Tensor2>,
    second_moment: Vec<Tensor2>,
    step: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        }
    }

    /// Registers a parameter and returns its index.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) -> usize {
        let (r, c) = value.shape();
        self.names.push(name.into());
        self.values.push(value);
        self.grads.push(Tensor2::zeros(r, c));
        self.first_moment.push(Tensor2::zeros(r, c));
        self.second_moment.push(Tensor2::zeros(r, c));
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, idx: usize) -> &Tensor2 {
        &self.values[idx]
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Tensor2 {
        &mut self.values[idx]
    }

    pub fn values(&self) -> &[Tensor2] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.values[i])
    }

    pub fn grad(&self, idx: usize) -> &Tensor2 {
        &self.grads[idx]
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Pushes every parameter onto `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|v| {
                if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Adds `scale * grads[i]` into each accumulator.
    pub fn accumulate(&mut self, grads: &[Tensor2], scale: f64) -> Result<()> {
        if grads.len() != self.grads.len() {
            return Err(invalid(format!(
                "expected {} gradients, got {}",
                self.grads.len(),
                grads.len()
            )));
        }
        for (acc, g) in self.grads.iter_mut().zip(grads) {
            acc.add_assign(&g.scale(scale))?;
        }
        Ok(())
    }

    /// One Adam update from the accumulated gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        for idx in 0..self.values.len() {
            let g = self.grads[idx].data();
            let m = self.first_moment[idx].data_mut();
            for (mv, gv) in m.iter_mut().zip(g) {
                *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            }
            let v = self.second_moment[idx].data_mut();
            for (vv, gv) in v.iter_mut().zip(g) {
                *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            }
            let m = self.first_moment[idx].data();
            let v = self.second_moment[idx].data();
            for ((p, mv), vv) in self.values[idx].data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mv / bias1;
                let v_hat = vv / bias2;
                *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }

    /// Named value pairs, in insertion order.
    pub fn named_values(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Rebuilds a store from named tensors; optimizer state starts fresh.
    pub fn from_named(entries: Vec<(String, Tensor2)>) -> Self {
        let mut store = Self::new();
        for (name, value) in entries {
            store.insert(name, value);
        }
        store
    }

    /// Keeps values but drops gradients and optimizer state.
    pub fn snapshot(&self) -> ParamStore {
        Self::from_named(
            self.names
                .iter()
                .cloned()
                .zip(self.values.iter().cloned())
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor2::filled(1, 1, v));
        s
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
        let mut s = scalar_store(1.0);
        s.accumulate(&[Tensor2::filled(1, 1, 1.0)], 1.0).unwrap();
        s.adam_step(&AdamConfig::default());
        let expected = 1.0 - 0.01 * 1.0 / (1.0 + 1e-8);
        assert!((s.value(0)[(0, 0)] - expected).abs() < 1e-15);
        assert!((1.0 - s.value(0)[(0, 0)] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = scalar_store(0.3);
        s.adam_step(&AdamConfig::default());
        assert_eq!(s.value(0)[(0, 0)], 0.3);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut s = scalar_store(0.0);
        s.accumulate(&[Tensor2::filled(1, 1, 2.0)], 1.0).unwrap();
        s.adam_step(&AdamConfig::default());
        let m1 = s.first_moment[0][(0, 0)];
        s.zero_grad();
        s.adam_step(&AdamConfig::default());
        assert!((s.first_moment[0][(0, 0)] - 0.9 * m1).abs() < 1e-15);
    }

    #[test]
    fn accumulate_rejects_wrong_arity() {
        let mut s = scalar_store(0.0);
        assert!(s.accumulate(&[], 1.0).is_err());
    }
}
