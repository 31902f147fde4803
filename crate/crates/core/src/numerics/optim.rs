//! SGD with momentum and L2 weight decay, plus the
//! cosine and multi-step learning-rate schedules.

use std::f64::consts::PI;

use super::tape::ParamStore;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Momentum buffers keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Sgd<T = f32> {
    pub config: SgdConfig,
    buffers: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            buffers: Vec::new(),
        }
    }

    pub fn buffers(&self) -> &[(String, Tensor<T>)] {
        &self.buffers
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<T>> {
        self.buffers.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn set_buffer(&mut self, name: &str, value: Tensor<T>) {
        match self.buffers.iter_mut().find(|(n, _)| n == name) {
            Some((_, t)) => *t = value,
            None => self.buffers.push((name.to_string(), value)),
        }
    }

    /// One update over every trainable parameter:
    /// `v <- mu v + g + wd theta; theta <- theta - lr v`, then zeroes the
    /// gradients. A non-finite gradient aborts before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if store.iter().any(|p| p.trainable && !p.grad.all_finite()) {
            return Err(Error::NonFinite { op: "sgd_step" });
        }
        let mu = T::from_f64_lossy(self.config.momentum);
        let wd = T::from_f64_lossy(self.config.weight_decay);
        let lr = T::from_f64_lossy(lr);
        for p in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            let idx = match self.buffers.iter().position(|(n, _)| *n == p.name) {
                Some(i) if self.buffers[i].1.shape() == p.value.shape() => i,
                Some(i) => {
                    self.buffers[i].1 = Tensor::zeros(p.value.shape());
                    i
                }
                None => {
                    self.buffers
                        .push((p.name.clone(), Tensor::zeros(p.value.shape())));
                    self.buffers.len() - 1
                }
            };
            let v = self.buffers[idx].1.data_mut();
            for ((vi, &gi), theta) in v.iter_mut().zip(p.grad.data()).zip(p.value.data_mut()) {
                *vi = mu * *vi + gi + wd * *theta;
                *theta = *theta - lr * *vi;
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// `base * 0.5 * (1 + cos(pi * epoch / total))`.
pub fn lr_cosine(base: f64, epoch: usize, total: usize) -> f64 {
    assert!(total > 0, "cosine schedule needs at least one epoch");
    base * 0.5 * (1.0 + (PI * epoch as f64 / total as f64).cos())
}

/// Milestones at 3/5 and 4/5 of training, decay 0.1 at each.
pub const DEFAULT_MILESTONES: [f64; 2] = [0.6, 0.8];

/// Step decay by `factor` for each milestone fraction already reached.
pub fn lr_multistep(base: f64, epoch: usize, total: usize, milestones: &[f64], factor: f64) -> f64 {
    let crossed = milestones
        .iter()
        .filter(|&&m| epoch >= (m * total as f64).round() as usize)
        .count();
    base * factor.powi(crossed as i32)
}
