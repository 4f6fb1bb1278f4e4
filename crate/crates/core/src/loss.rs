//! Scale-invariant log loss over masked depth maps.
//!
//! With `g_i = ln(pred_i) - ln(gt_i)` over the `T` valid pixels,
//!
//! ```text
//! D = (1/T) sum g_i^2 - (lambda / T^2) (sum g_i)^2
//! L = alpha * sqrt(D)
//! ```

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub alpha: f64,
    /// Predictions are floored here before the log.
    pub min_depth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.85,
            alpha: 10.0,
            min_depth: 1e-3,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda {} not in [0, 1]", self.lambda)));
        }
        if !(self.alpha > 0.0) || !(self.min_depth > 0.0) {
            return Err(Error::invalid("alpha and min_depth must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LossBreakdown {
    /// Log differences of the valid pixels, in pixel order.
    pub g: Vec<f64>,
    pub t: usize,
    pub d: f64,
    pub l: f64,
}

/// Below this D the square root is treated as flat (zero gradient).
const SQRT_FLOOR: f64 = 1e-12;

pub fn silog_loss(pred: &[f32], gt: &[f32], mask: &[bool], cfg: &LossConfig) -> Result<LossBreakdown> {
    if pred.len() != gt.len() || gt.len() != mask.len() {
        return Err(Error::invalid(format!(
            "silog: pred/gt/mask lengths differ ({}, {}, {})",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    let mut g = Vec::new();
    for ((&p, &d), &m) in pred.iter().zip(gt).zip(mask) {
        if !m {
            continue;
        }
        if !(d > 0.0) {
            return Err(Error::invalid(format!("silog: ground truth {d} <= 0 inside mask")));
        }
        g.push((p as f64).max(cfg.min_depth).ln() - (d as f64).ln());
    }
    if g.is_empty() {
        return Err(Error::invalid("silog: mask selects no pixels"));
    }
    let t = g.len();
    let tf = t as f64;
    let sum: f64 = g.iter().sum();
    let sum_sq: f64 = g.iter().map(|x| x * x).sum();
    let d = sum_sq / tf - cfg.lambda * sum * sum / (tf * tf);
    let l = cfg.alpha * d.max(0.0).sqrt();
    Ok(LossBreakdown { g, t, d, l })
}

/// dL/dpred for every pixel (zero outside the mask and on the clamped branch).
pub fn silog_grad(pred: &[f32], mask: &[bool], cfg: &LossConfig, breakdown: &LossBreakdown) -> Vec<f32> {
    let mut out = vec![0.0f32; pred.len()];
    if breakdown.d < SQRT_FLOOR {
        return out;
    }
    let tf = breakdown.t as f64;
    let sum: f64 = breakdown.g.iter().sum();
    let dl_dd = cfg.alpha / (2.0 * breakdown.d.sqrt());
    let mut gi = breakdown.g.iter();
    for ((o, &p), &m) in out.iter_mut().zip(pred).zip(mask) {
        if !m {
            continue;
        }
        let g = *gi.next().expect("one log difference per masked pixel");
        let p = p as f64;
        if p < cfg.min_depth {
            continue;
        }
        let dd_dg = 2.0 * g / tf - 2.0 * cfg.lambda * sum / (tf * tf);
        *o = (dl_dd * dd_dg / p) as f32;
    }
    out
}

/// `Var(g) + (1 - lambda) * mean(g)^2`, the rewritten form of D.
pub fn variance_form(g: &[f64], lambda: f64) -> f64 {
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    let var = g.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var + (1.0 - lambda) * mean * mean
}
