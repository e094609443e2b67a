//! AdamW with linear warmup and cosine decay.

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor2D;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub peak_lr: f64,
    /// Fraction of `total_steps` spent in linear warmup.
    pub warmup_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub total_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            peak_lr: 3e-5,
            warmup_fraction: 0.03,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
            total_steps: 1,
        }
    }
}

impl AdamConfig {
    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_fraction * self.total_steps as f64).round() as u64
    }

    /// Learning rate used by the `step`-th update (1-based). Rises linearly
    /// to `peak_lr` at the end of warmup, then follows a half cosine to zero
    /// at `total_steps`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let warm = self.warmup_steps();
        let step = step.min(self.total_steps);
        if step <= warm {
            if warm == 0 {
                return self.peak_lr;
            }
            return self.peak_lr * step as f64 / warm as f64;
        }
        let span = (self.total_steps - warm) as f64;
        let progress = (step - warm) as f64 / span;
        0.5 * self.peak_lr * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config("peak_lr must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        Ok(())
    }
}

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor2D<S>>,
    v: Vec<Tensor2D<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new<P: ParamSet<S>>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor2D<S>> = params
            .named()
            .iter()
            .map(|(_, t)| Tensor2D::zeros(t.rows(), t.cols()))
            .collect();
        AdamState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.config.lr_at(self.step)
    }
}

/// One AdamW update. Fails before touching any parameter if a gradient
/// entry is non-finite, naming the offending tensor.
pub fn adam_step<S: Scalar, P: ParamSet<S>>(params: &mut P, grads: &P, state: &mut AdamState<S>) -> Result<()> {
    let named = grads.named();
    if named.len() != state.m.len() {
        return Err(Error::shape("optimizer state does not match parameter set"));
    }
    for ((name, g), m) in named.iter().zip(&state.m) {
        if g.shape() != m.shape() {
            return Err(Error::shape(format!("gradient '{name}' has shape {:?}, state {:?}", g.shape(), m.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of '{name}'")));
        }
    }
    if state.step >= state.config.total_steps {
        return Err(Error::Config(format!(
            "optimizer already took all {} scheduled steps",
            state.config.total_steps
        )));
    }
    state.step += 1;
    let cfg = &state.config;
    let lr = S::of(cfg.lr_at(state.step));
    let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
    let bc1 = S::one() / (S::one() - b1.powi(state.step as i32));
    let bc2 = S::one() / (S::one() - b2.powi(state.step as i32));
    let eps = S::of(cfg.eps);
    let wd = S::of(cfg.weight_decay);
    for (((p, (_, g)), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(named)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        // biases and norm gains (single-row tensors) are not decayed
        let decay = if p.rows() > 1 { wd } else { S::zero() };
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (S::one() - b1) * gv;
            *vv = b2 * *vv + (S::one() - b2) * gv * gv;
            let mhat = *mv * bc1;
            let vhat = *vv * bc2;
            *pv -= lr * (mhat / (vhat.sqrt() + eps) + decay * *pv);
        }
    }
    Ok(())
}

impl<S: Scalar> ParamSet<S> for Tensor2D<S> {
    fn named(&self) -> Vec<(String, &Tensor2D<S>)> {
        vec![("value".into(), self)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2D<S>> {
        vec![self]
    }
}
