//! SGD with momentum and decoupled weight decay, and the warmup + cosine
//! learning-rate schedule.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// Linear warmup from `base` to `peak`, then cosine from `peak` to `final_lr`
/// at step `total - 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub peak: f64,
    pub final_lr: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak >= self.base && self.base >= self.final_lr && self.final_lr >= 0.0) {
            return Err(Error::invalid(format!(
                "learning rates need peak >= base >= final >= 0, got {} / {} / {}",
                self.peak, self.base, self.final_lr
            )));
        }
        if self.total == 0 || self.warmup >= self.total {
            return Err(Error::invalid(format!(
                "warmup ({}) must be shorter than the run ({} steps)",
                self.warmup, self.total
            )));
        }
        Ok(())
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.base + (self.peak - self.base) * step as f64 / self.warmup as f64;
        }
        let span = self.total - 1 - self.warmup;
        if span == 0 {
            return self.peak;
        }
        let progress = ((step - self.warmup) as f64 / span as f64).min(1.0);
        let c = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.final_lr + (self.peak - self.final_lr) * c
    }
}

/// Momentum SGD: `v = mu * v + g`, `p = p - lr * v - lr * wd * p`.
#[derive(Clone, Debug)]
pub struct Sgd<F: Scalar = f32> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// Applies one update. `grads[i]` belongs to parameter `i`; `None`
    /// leaves that parameter (and its velocity) untouched.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &[Option<Tensor<F>>], lr: f64) {
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), None);
        }
        let (mu, wd, lr) = (F::c(self.momentum), F::c(self.weight_decay), F::c(lr));
        for (id, grad) in params.ids().collect::<Vec<_>>().into_iter().zip(grads) {
            let Some(grad) = grad else { continue };
            let p = params.get_mut(id);
            if p.frozen {
                continue;
            }
            let v = self.velocity[id.index()].get_or_insert_with(|| vec![F::zero(); grad.numel()]);
            for ((w, vi), gi) in p.value.data_mut().iter_mut().zip(v.iter_mut()).zip(grad.data()) {
                *vi = mu * *vi + *gi;
                *w = *w - lr * *vi - lr * wd * *w;
            }
        }
    }
}
