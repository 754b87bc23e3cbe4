use super::layers::{Module, StateKind};
use super::tensor::{Scalar, Tensor};
use super::{NnError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// AdamW with decoupled weight decay. Moments are indexed by the order in which
/// a module visits its parameters, so one optimizer belongs to one model.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter of `model` from its accumulated gradient.
    /// A non-finite gradient aborts the step before anything is modified.
    pub fn step<M: Module<T> + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        let mut bad = None;
        model.visit("", &mut |name, kind, t| {
            if kind == StateKind::Param && bad.is_none() {
                if let Some(g) = t.grad() {
                    if g.iter().any(|v| !v.is_finite()) {
                        bad = Some(name.to_string());
                    }
                }
            }
        });
        if let Some(name) = bad {
            return Err(NnError::Training(format!("non-finite gradient in {name}")));
        }
        self.step += 1;
        let mut idx = 0;
        model.visit_mut("", &mut |_, kind, t| {
            if kind == StateKind::Param {
                self.update(idx, t);
                idx += 1;
            }
        });
        Ok(())
    }

    /// Same as [`AdamW::step`] over an explicit parameter list.
    pub fn step_tensors(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            if p.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(NnError::Training(format!("non-finite gradient in parameter {i}")));
            }
        }
        self.step += 1;
        for (i, p) in params.iter_mut().enumerate() {
            self.update(i, p);
        }
        Ok(())
    }

    fn update(&mut self, idx: usize, p: &mut Tensor<T>) {
        let n = p.numel();
        if self.first.len() <= idx {
            self.first.resize_with(idx + 1, Vec::new);
            self.second.resize_with(idx + 1, Vec::new);
        }
        if self.first[idx].len() != n {
            self.first[idx] = vec![T::zero(); n];
            self.second[idx] = vec![T::zero(); n];
        }
        let c = self.config;
        let t = self.step as i32;
        let lr = T::of(c.lr);
        let decay = T::of(1.0 - c.lr * c.weight_decay);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let eps = T::of(c.eps);
        let m = &mut self.first[idx];
        let v = &mut self.second[idx];
        if !p.requires_grad() {
            return;
        }
        let (data, grad) = p.data_and_grad_mut();
        for i in 0..n {
            let g = grad[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] = data[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Linear warmup followed by cosine annealing, evaluated per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub min_lr: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            warmup_epochs: 5,
            total_epochs: 200,
            min_lr: 0.0,
        }
    }
}

impl LrSchedule {
    /// The cosine phase divides by `total − warmup − 1` so the last epoch lands
    /// on `min_lr`; a single-epoch cosine phase stays at `base_lr`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return self.base_lr * (epoch + 1) as f64 / self.warmup_epochs as f64;
        }
        let span = self
            .total_epochs
            .saturating_sub(self.warmup_epochs)
            .saturating_sub(1);
        let progress = if span == 0 {
            0.0
        } else {
            ((epoch - self.warmup_epochs) as f64 / span as f64).min(1.0)
        };
        self.min_lr
            + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64, g: f64) -> Tensor<f64> {
        let mut t = Tensor::param(&[1], vec![v]).unwrap();
        t.grad_mut().unwrap()[0] = g;
        t
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
        let mut p = scalar(0.7, 0.0);
        opt.step_tensors(&mut [&mut p]).unwrap();
        assert_eq!(p.data()[0], 0.7);
    }

    #[test]
    fn pure_decay() {
        let mut opt = AdamW::new(AdamWConfig { lr: 0.01, weight_decay: 0.1, ..Default::default() });
        let mut p = scalar(2.0, 0.0);
        opt.step_tensors(&mut [&mut p]).unwrap();
        assert!((p.data()[0] - 2.0 * (1.0 - 0.001)).abs() < 1e-15);
    }

    #[test]
    fn single_step_by_hand() {
        // m = 0.1, v = 0.001, m̂ = 1, v̂ = 1 → θ' = 1 − 0.1·1/(1 + 1e−8)
        let mut opt = AdamW::new(AdamWConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() });
        let mut p = scalar(1.0, 1.0);
        opt.step_tensors(&mut [&mut p]).unwrap();
        let want = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.data()[0] - want).abs() < 1e-12, "{}", p.data()[0]);
    }

    #[test]
    fn nan_gradient_is_a_training_error() {
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut p = scalar(1.0, f64::NAN);
        assert!(matches!(opt.step_tensors(&mut [&mut p]), Err(NnError::Training(_))));
        assert_eq!(p.data()[0], 1.0);
    }

    #[test]
    fn schedule_examples() {
        let s = LrSchedule::default();
        assert!((s.lr_at(0) - 2e-4).abs() < 1e-18);
        assert!((s.lr_at(4) - 1e-3).abs() < 1e-18);
        assert!((s.lr_at(5) - 1e-3).abs() < 1e-18);
        assert!(s.lr_at(199).abs() < 1e-12);
        for e in 0..200 {
            let lr = s.lr_at(e);
            assert!((0.0..=1e-3).contains(&lr));
        }
    }
}
