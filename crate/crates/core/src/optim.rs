//! Adam/AdamW and the warmup-cosine learning-rate schedule.
//!
//! The optimizer keeps its first/second moment buffers keyed by parameter
//! name and carries its bias-correction terms as running products, so a
//! checkpointed state resumes bit-for-bit: replaying the same gradients
//! after a restore touches the same floats in the same order.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::nn::{GradientMap, ParameterStore};

/// Adam hyperparameters. `weight_decay` is decoupled (AdamW) and applies
/// only to parameters with two or more dimensions, never to biases or
/// scalar knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with optional decoupled weight decay.
#[derive(Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    pow_beta1: f64,
    pow_beta2: f64,
    slots: BTreeMap<String, Slot>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        if !(0.0..1.0).contains(&cfg.beta1)
            || !(0.0..1.0).contains(&cfg.beta2)
            || !(cfg.eps > 0.0)
            || !(cfg.weight_decay >= 0.0)
        {
            return Err(Error::Config(format!("bad optimizer settings {cfg:?}")));
        }
        Ok(Self {
            cfg,
            t: 0,
            pow_beta1: 1.0,
            pow_beta2: 1.0,
            slots: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Number of completed steps.
    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Apply one update at learning rate `lr`. Every gradient entry must
    /// name an existing parameter of the same size. A non-finite gradient
    /// rejects the whole step before anything is touched.
    pub fn step(
        &mut self,
        params: &mut ParameterStore,
        grads: &GradientMap,
        lr: f64,
    ) -> Result<()> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::Config(format!("learning rate {lr}")));
        }
        for (name, grad) in grads.iter() {
            let param = params
                .get(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter {name}")))?;
            if param.shape() != grad.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: param.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
            if !grad.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for {name}")));
            }
        }

        self.t += 1;
        self.pow_beta1 *= self.cfg.beta1;
        self.pow_beta2 *= self.cfg.beta2;
        let bc1 = 1.0 - self.pow_beta1;
        let bc2 = 1.0 - self.pow_beta2;

        for (name, grad) in grads.iter() {
            let len = grad.len();
            let slot = self.slots.entry(name.to_string()).or_insert_with(|| Slot {
                m: vec![0.0; len],
                v: vec![0.0; len],
            });
            if slot.m.len() != len {
                return Err(Error::Contract(format!(
                    "moment buffer for {name} has {} values, gradient has {len}",
                    slot.m.len()
                )));
            }
            let param = params.get_mut(name).expect("validated above");
            let decay = if self.cfg.weight_decay > 0.0 && param.ndim() >= 2 {
                self.cfg.weight_decay
            } else {
                0.0
            };
            let data = param.data_mut();
            for i in 0..len {
                let g = grad.data()[i];
                slot.m[i] = self.cfg.beta1 * slot.m[i] + (1.0 - self.cfg.beta1) * g;
                slot.v[i] = self.cfg.beta2 * slot.v[i] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                data[i] -= lr * (m_hat / (math::sqrt(v_hat) + self.cfg.eps) + decay * data[i]);
            }
        }
        Ok(())
    }

    /// Serializable state: `(t, beta1^t, beta2^t)` plus each slot's flat
    /// moment buffers in name order.
    pub fn state(&self) -> (u64, f64, f64, Vec<(String, Vec<f64>, Vec<f64>)>) {
        let slots = self
            .slots
            .iter()
            .map(|(name, s)| (name.clone(), s.m.clone(), s.v.clone()))
            .collect();
        (self.t, self.pow_beta1, self.pow_beta2, slots)
    }

    /// Rebuild from [`Adam::state`] output.
    pub fn restore(
        cfg: AdamConfig,
        t: u64,
        pow_beta1: f64,
        pow_beta2: f64,
        slots: Vec<(String, Vec<f64>, Vec<f64>)>,
    ) -> Result<Self> {
        let mut adam = Self::new(cfg)?;
        adam.t = t;
        adam.pow_beta1 = pow_beta1;
        adam.pow_beta2 = pow_beta2;
        for (name, m, v) in slots {
            if m.len() != v.len() {
                return Err(Error::Contract(format!(
                    "moment buffers for {name} disagree: {} vs {}",
                    m.len(),
                    v.len()
                )));
            }
            adam.slots.insert(name, Slot { m, v });
        }
        Ok(adam)
    }
}

/// Linear warmup to `base_lr` over `warmup_steps`, then cosine decay to zero
/// at `total_steps`. Step 0 of a warmed-up schedule has rate 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        if !(base_lr > 0.0) || !base_lr.is_finite() {
            return Err(Error::Config(format!("base learning rate {base_lr}")));
        }
        if total_steps == 0 || warmup_steps > total_steps {
            return Err(Error::Config(format!(
                "schedule needs 0 < total ({total_steps}) and warmup ({warmup_steps}) <= total"
            )));
        }
        Ok(Self {
            base_lr,
            warmup_steps,
            total_steps,
        })
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps - self.warmup_steps;
        let frac = if span == 0 {
            1.0
        } else {
            ((step - self.warmup_steps) as f64 / span as f64).min(1.0)
        };
        self.base_lr * 0.5 * (1.0 + math::cos(core::f64::consts::PI * frac))
    }
}
