//! Adam and the step-decay learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::params::ParamGroup;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for every parameter plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.shape());
        Self {
            config,
            step: 0,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
        }
    }

    /// One bias-corrected Adam update. `lrs[i]` is the learning rate for
    /// parameter `i`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lrs: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() || lrs.len() != params.len() {
            return Err(dim_err!(
                "adam: {} params, {} grads, {} moment buffers, {} rates",
                params.len(),
                grads.len(),
                self.first.len(),
                lrs.len()
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(dim_err!(
                    "adam: parameter {} has shape {:?}, gradient {:?}, moments {:?}",
                    i,
                    p.shape(),
                    g.shape(),
                    self.first[i].shape()
                ));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - libm::pow(beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.step as f64);
        for i in 0..params.len() {
            let lr = lrs[i];
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let w = params[i].data_mut();
            for (((wj, mj), vj), &gj) in w.iter_mut().zip(m).zip(v).zip(grads[i].data()) {
                *mj = beta1 * *mj + (1.0 - beta1) * gj;
                *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                *wj -= lr * mhat / (libm::sqrt(vhat) + eps);
            }
        }
        Ok(())
    }
}

/// Step decay: the base rate holds for the first `decay_after` epochs, then
/// is multiplied by `decay_factor` at the start of every `decay_every`-epoch
/// block. Transformer parameters use `base_lr * transformer_multiplier`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LrSchedule {
    pub base_lr: f64,
    pub transformer_multiplier: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub decay_after: usize,
}

impl LrSchedule {
    /// 100-epoch schedule: decay x0.65 every 10 epochs after epoch 40.
    pub const FULL: LrSchedule = LrSchedule {
        base_lr: 5e-4,
        transformer_multiplier: 0.1,
        decay_factor: 0.65,
        decay_every: 10,
        decay_after: 40,
    };

    /// 20-epoch desk schedule: decay x0.65 every 2 epochs after epoch 8.
    pub const DESK: LrSchedule = LrSchedule {
        base_lr: 5e-4,
        transformer_multiplier: 0.1,
        decay_factor: 0.65,
        decay_every: 2,
        decay_after: 8,
    };

    /// Number of decays applied by (zero-based) `epoch`.
    pub fn decays(&self, epoch: usize) -> u32 {
        if epoch < self.decay_after {
            0
        } else {
            ((epoch - self.decay_after) / self.decay_every.max(1) + 1) as u32
        }
    }

    pub fn lr(&self, epoch: usize, group: ParamGroup) -> f64 {
        let base = self.base_lr * libm::pow(self.decay_factor, self.decays(epoch) as f64);
        match group {
            ParamGroup::Base => base,
            ParamGroup::Transformer => base * self.transformer_multiplier,
        }
    }

    pub fn rates(&self, epoch: usize, groups: impl Iterator<Item = ParamGroup>) -> Vec<f64> {
        groups.map(|g| self.lr(epoch, g)).collect()
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self::DESK
    }
}

/// Convenience for single-rate updates.
pub fn uniform_rates(lr: f64, n: usize) -> Vec<f64> {
    vec![lr; n]
}
