//! Adam with bias correction and a polynomial learning-rate decay.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
            t: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One Adam update of every parameter from its accumulated gradient.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, lr: f64) -> Result<()> {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    for (name, p) in params.iter_mut() {
        let n = p.numel();
        let mom = state.moments.entry(name.to_string()).or_insert_with(|| Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        if mom.m.len() != n || mom.v.len() != n {
            return Err(Error::invalid(format!(
                "optimizer state for `{name}` has {} entries, parameter has {n}",
                mom.m.len()
            )));
        }
        let grad = p
            .grad()
            .ok_or_else(|| Error::invalid(format!("parameter `{name}` has no gradient buffer")))?
            .to_vec();
        let data = p.data_mut();
        for i in 0..n {
            let g = grad[i] as f64;
            let m = b1 * mom.m[i] as f64 + (1.0 - b1) * g;
            let v = b2 * mom.v[i] as f64 + (1.0 - b2) * g * g;
            mom.m[i] = m as f32;
            mom.v[i] = v as f32;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            data[i] = (data[i] as f64 - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub power: f64,
    pub total_steps: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            power: 0.9,
            total_steps: 1,
        }
    }
}

/// `base_lr * (1 - step / total)^power`, zero at and past the end.
pub fn poly_lr(schedule: &LrSchedule, step: u64) -> f64 {
    if schedule.total_steps == 0 || step >= schedule.total_steps {
        return 0.0;
    }
    let frac = 1.0 - step as f64 / schedule.total_steps as f64;
    (schedule.base_lr * frac.powf(schedule.power)).max(0.0)
}
