//! Adam and a reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One bias-corrected update of every trainable parameter from its
    /// accumulated gradient.
    pub fn step(&self, store: &mut ParamStore) {
        for p in store.iter_mut().filter(|p| p.trainable) {
            p.step += 1;
            let bc1 = 1.0 - self.beta1.powi(p.step as i32);
            let bc2 = 1.0 - self.beta2.powi(p.step as i32);
            let data = p.value.data_mut();
            for i in 0..data.len() {
                let g = p.grad[i];
                p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
                p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Multiplies the learning rate by `factor` once the validation loss has
/// failed to improve on its best value for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self { factor, patience, best: f64::INFINITY, bad_epochs: 0 }
    }

    /// Records one epoch's validation loss and returns the learning rate to
    /// use from now on.
    pub fn observe(&mut self, val_loss: f64, lr: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            lr * self.factor
        } else {
            lr
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Replays a loss history through a fresh scheduler.
pub fn plateau_lr(history: &[f64], lr0: f64, factor: f64, patience: usize) -> f64 {
    let mut s = PlateauScheduler::new(factor, patience);
    history.iter().fold(lr0, |lr, &l| s.observe(l, lr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::from_vec(vec![2.0, -1.0]));
        s.get_mut(id).grad = vec![1.0, 1.0];
        Adam::new(0.1).step(&mut s);
        // bias-corrected m_hat = 1, v_hat = 1
        let expect = 0.1 / (1.0 + 1e-8);
        assert!((s.value(id).data()[0] - (2.0 - expect)).abs() < 1e-15);
        assert!((s.value(id).data()[1] - (-1.0 - expect)).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_keeps_value_and_decays_moments() {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::from_vec(vec![0.5]));
        s.get_mut(id).grad = vec![2.0];
        let adam = Adam::new(0.01);
        adam.step(&mut s);
        let (m1, v1, x1) = (s.get(id).m[0], s.get(id).v[0], s.value(id).data()[0]);
        s.zero_grad();
        adam.step(&mut s);
        let p = s.get(id);
        assert!((p.m[0] - 0.9 * m1).abs() < 1e-15 && (p.v[0] - 0.999 * v1).abs() < 1e-18);
        // the step keeps moving on momentum alone, never by more than lr
        assert!((p.value.data()[0] - x1).abs() <= 0.01 + 1e-12);
    }

    #[test]
    fn deterministic() {
        let mk = || {
            let mut s = ParamStore::new();
            let id = s.add("p", Tensor::from_vec(vec![0.3, 0.7]));
            for k in 0..2 {
                s.get_mut(id).grad = vec![0.1 * f64::from(k + 1), -0.2];
                Adam::new(1e-3).step(&mut s);
            }
            s.value(id).data().to_vec()
        };
        assert_eq!(mk(), mk());
    }

    #[test]
    fn plateau_examples() {
        let dec: Vec<f64> = (0..30).map(|k| 10.0 - f64::from(k)).collect();
        assert_eq!(plateau_lr(&dec, 1e-3, 0.1, 10), 1e-3);
        let mut flat = vec![1.0];
        flat.extend(std::iter::repeat(1.0).take(10));
        assert!((plateau_lr(&flat, 1e-3, 0.1, 10) - 1e-4).abs() < 1e-18);
        let mut nine = vec![1.0];
        nine.extend(std::iter::repeat(1.0).take(9));
        nine.push(0.5);
        assert_eq!(plateau_lr(&nine, 1e-3, 0.1, 10), 1e-3);
        // counter resets after a reduction
        let mut long = vec![1.0];
        long.extend(std::iter::repeat(2.0).take(19));
        assert!((plateau_lr(&long, 1.0, 0.5, 10) - 0.5).abs() < 1e-15);
        long.push(2.0);
        assert!((plateau_lr(&long, 1.0, 0.5, 10) - 0.25).abs() < 1e-15);
    }
}
