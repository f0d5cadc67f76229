//! Adam and the halve-on-plateau learning-rate schedule.

use crate::layers::ParamList;
use serde::{Deserialize, Serialize};

pub struct Adam {
    params: ParamList,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    lr: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: ParamList, lr: f64, beta1: f64, beta2: f64) -> Adam {
        let m = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        let v = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam { params, beta1, beta2, eps: 1e-8, lr, step_count: 0, m, v }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.params {
            t.zero_grad();
        }
    }

    /// One update over all parameters that received gradients.
    pub fn step(&mut self) {
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for (idx, (_, t)) in self.params.iter().enumerate() {
            let Some(grad) = t.grad() else { continue };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let mut data = t.data_mut();
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    /// Optimizer state for checkpointing, keyed by parameter name.
    pub fn export_state(&self) -> Vec<(String, Vec<f64>, Vec<f64>)> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, (name, _))| (name.clone(), self.m[i].clone(), self.v[i].clone()))
            .collect()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn restore_state(&mut self, moments: &[(String, Vec<f64>, Vec<f64>)], step_count: u64) {
        for (name, m, v) in moments {
            if let Some(i) = self.params.iter().position(|(n, _)| n == name) {
                if self.m[i].len() == m.len() {
                    self.m[i].copy_from_slice(m);
                    self.v[i].copy_from_slice(v);
                }
            }
        }
        self.step_count = step_count;
    }
}

/// Halves the learning rate whenever the validation loss has failed to
/// improve for `patience` consecutive evaluations.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub best: Option<f64>,
    pub stale_evals: usize,
}

impl PlateauSchedule {
    pub fn new(initial_lr: f64, factor: f64, patience: usize) -> PlateauSchedule {
        assert!(patience >= 1, "patience must be at least 1");
        PlateauSchedule { lr: initial_lr, factor, patience, best: None, stale_evals: 0 }
    }

    /// Feeds one validation result; returns `(improved, halved)`.
    pub fn observe(&mut self, val_loss: f64) -> (bool, bool) {
        let improved = match self.best {
            None => true,
            Some(best) => val_loss < best,
        };
        if improved {
            self.best = Some(val_loss);
            self.stale_evals = 0;
            (true, false)
        } else {
            self.stale_evals += 1;
            if self.stale_evals >= self.patience {
                self.lr *= self.factor;
                self.stale_evals = 0;
                (false, true)
            } else {
                (false, false)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{self, Tensor};

    #[test]
    fn adam_minimizes_a_quadratic() {
        let p = Tensor::param(vec![5.0, -3.0], &[2]);
        let mut adam = Adam::new(vec![("p".into(), p.clone())], 0.1, 0.9, 0.999);
        for _ in 0..300 {
            adam.zero_grads();
            let loss = tensor::sum_all(&tensor::square(&p));
            loss.backward();
            adam.step();
        }
        assert!(p.data().iter().all(|v| v.abs() < 1e-2), "{:?}", p.to_vec());
    }

    #[test]
    fn schedule_halves_after_two_stagnant_evaluations() {
        let mut s = PlateauSchedule::new(5e-4, 0.5, 2);
        assert_eq!(s.observe(1.0), (true, false));
        assert_eq!(s.observe(1.1), (false, false));
        let (improved, halved) = s.observe(1.05);
        assert!(!improved && halved);
        assert!((s.lr - 2.5e-4).abs() < 1e-12);
    }

    #[test]
    fn schedule_lr_never_increases() {
        let mut s = PlateauSchedule::new(5e-4, 0.5, 2);
        let mut prev = s.lr;
        for (i, loss) in [3.0, 2.0, 2.5, 2.4, 1.9, 2.6, 2.7, 2.1, 2.2].iter().enumerate() {
            s.observe(*loss);
            assert!(s.lr <= prev, "step {i}");
            prev = s.lr;
        }
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = PlateauSchedule::new(1e-3, 0.5, 2);
        s.observe(1.0);
        s.observe(1.2); // stale 1
        s.observe(0.9); // improvement resets
        s.observe(1.0); // stale 1
        assert!((s.lr - 1e-3).abs() < 1e-15);
        s.observe(1.0); // stale 2 -> halve
        assert!((s.lr - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn adam_state_roundtrip() {
        let p = Tensor::param(vec![1.0], &[1]);
        let mut adam = Adam::new(vec![("p".into(), p.clone())], 0.01, 0.9, 0.999);
        adam.zero_grads();
        tensor::sum_all(&tensor::square(&p)).backward();
        adam.step();
        let state = adam.export_state();
        let mut fresh = Adam::new(vec![("p".into(), p.clone())], 0.01, 0.9, 0.999);
        fresh.restore_state(&state, adam.step_count());
        assert_eq!(fresh.export_state(), state);
        assert_eq!(fresh.step_count(), 1);
    }
}
