//! Standard monocular-depth error metrics over masked, capped pixels.

use crate::error::{Error, Result};

pub const DELTA_BASE: f64 = 1.25;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub min_cap: f64,
    pub max_cap: f64,
}

impl EvalConfig {
    pub fn new(min_cap: f64, max_cap: f64) -> Result<Self> {
        if !(min_cap > 0.0 && min_cap < max_cap) {
            return Err(Error::invalid(format!(
                "cap range ({min_cap}, {max_cap}) must satisfy 0 < min < max"
            )));
        }
        Ok(Self { min_cap, max_cap })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub log10: f64,
    pub t_count: usize,
}

/// Column order of [`MetricsReport::tsv_row`].
pub const TSV_COLUMNS: [&str; 9] = [
    "delta1", "delta2", "delta3", "abs_rel", "sq_rel", "rmse", "rmse_log", "log10", "t_count",
];

impl MetricsReport {
    pub fn tsv_header() -> String {
        TSV_COLUMNS.join("\t")
    }

    pub fn tsv_row(&self) -> String {
        format!(
            "{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.delta1,
            self.delta2,
            self.delta3,
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.log10,
            self.t_count
        )
    }

    /// Arithmetic mean of per-image reports; `t_count` is summed.
    pub fn mean(reports: &[MetricsReport]) -> Result<MetricsReport> {
        if reports.is_empty() {
            return Err(Error::invalid("no reports to average"));
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Ok(MetricsReport {
            delta1: avg(|r| r.delta1),
            delta2: avg(|r| r.delta2),
            delta3: avg(|r| r.delta3),
            abs_rel: avg(|r| r.abs_rel),
            sq_rel: avg(|r| r.sq_rel),
            rmse: avg(|r| r.rmse),
            rmse_log: avg(|r| r.rmse_log),
            log10: avg(|r| r.log10),
            t_count: reports.iter().map(|r| r.t_count).sum(),
        })
    }
}

/// Scores `pred` against `gt` over pixels with `mask` set and gt inside the cap;
/// predictions are clamped into the cap first.
pub fn compute_metrics(pred: &[f32], gt: &[f32], mask: &[bool], cfg: &EvalConfig) -> Result<MetricsReport> {
    if pred.len() != gt.len() || gt.len() != mask.len() {
        return Err(Error::invalid("metrics: pred/gt/mask lengths differ"));
    }
    let pairs: Vec<(f64, f64)> = pred
        .iter()
        .zip(gt)
        .zip(mask)
        .filter(|&((_, &d), &m)| m && (d as f64) >= cfg.min_cap && (d as f64) <= cfg.max_cap)
        .map(|((&p, &d), _)| ((p as f64).clamp(cfg.min_cap, cfg.max_cap), d as f64))
        .collect();
    if pairs.is_empty() {
        return Err(Error::invalid(
            "metrics: no pixel is both valid and inside the cap range",
        ));
    }
    let n = pairs.len() as f64;
    let thresholds = [DELTA_BASE, DELTA_BASE.powi(2), DELTA_BASE.powi(3)];
    let mut within = [0usize; 3];
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log, mut log10) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(p, d) in &pairs {
        let ratio = (p / d).max(d / p);
        for (count, thr) in within.iter_mut().zip(thresholds) {
            if ratio < thr {
                *count += 1;
            }
        }
        let diff = p - d;
        abs_rel += diff.abs() / d;
        sq_rel += diff * diff / d;
        sq += diff * diff;
        let dl = p.ln() - d.ln();
        sq_log += dl * dl;
        log10 += (p.log10() - d.log10()).abs();
    }
    Ok(MetricsReport {
        delta1: within[0] as f64 / n,
        delta2: within[1] as f64 / n,
        delta3: within[2] as f64 / n,
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        rmse_log: (sq_log / n).sqrt(),
        log10: log10 / n,
        t_count: pairs.len(),
    })
}
