//! Structural ablation: the same data, seed and step budget across model
//! variants and loss settings, compared on a shared held-out split.

use std::fs::File;
use std::io::{self, BufWriter};
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, TSV_COLUMNS};
use crate::network::Model;
use crate::synth::Sample;
use crate::train::train;

/// Keys a plan entry may override; everything else is shared.
pub const OVERRIDABLE: [&str; 5] = ["variant", "lambda", "alpha", "min_depth", "aspp_rates"];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationEntry {
    pub name: String,
    pub overrides: Vec<(String, String)>,
}

impl AblationEntry {
    pub fn new(name: &str, overrides: &[(&str, &str)]) -> Self {
        Self {
            name: name.to_string(),
            overrides: overrides
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationPlan {
    pub base: RunConfig,
    pub entries: Vec<AblationEntry>,
}

impl AblationPlan {
    /// Baseline, `+A`, `+A+U`, `+A+U+L`, and the full model with `lambda = 0.5`.
    pub fn standard(base: RunConfig) -> Self {
        Self {
            base,
            entries: vec![
                AblationEntry::new("baseline", &[("variant", "baseline")]),
                AblationEntry::new("+A", &[("variant", "aspp")]),
                AblationEntry::new("+A+U", &[("variant", "aspp_upconv")]),
                AblationEntry::new("+A+U+L", &[("variant", "full")]),
                AblationEntry::new("+A+U+L lambda=0.5", &[("variant", "full"), ("lambda", "0.5")]),
            ],
        }
    }

    pub fn config_for(&self, entry: &AblationEntry) -> Result<RunConfig> {
        let mut cfg = self.base.clone();
        for (k, v) in &entry.overrides {
            if !OVERRIDABLE.contains(&k.as_str()) {
                return Err(Error::invalid(format!(
                    "ablation entry `{}` may not override shared key `{k}`",
                    entry.name
                )));
            }
            cfg.set(k, v).map_err(Error::InvalidArgument)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::invalid("ablation plan has no entries"));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if self.entries[..i].iter().any(|p| p.name == e.name) {
                return Err(Error::invalid(format!("duplicate ablation entry `{}`", e.name)));
            }
            self.config_for(e)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: String,
    pub variant: String,
    pub lambda: f64,
    pub params: usize,
    pub final_loss: f64,
    pub seconds: f64,
    pub metrics: MetricsReport,
}

/// Trains every entry and returns rows sorted by validation RMSE. When
/// `log_dir` is given, each loss log is written there as `<index>.tsv`.
pub fn run_ablation(
    plan: &AblationPlan,
    train_set: &[Sample],
    val_set: &[Sample],
    log_dir: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    plan.validate()?;
    if val_set.is_empty() {
        return Err(Error::invalid("ablation needs a non-empty held-out split"));
    }
    let mut rows = Vec::with_capacity(plan.entries.len());
    for (i, entry) in plan.entries.iter().enumerate() {
        let cfg = plan.config_for(entry)?;
        let wrap = |e: Error| Error::Variant {
            variant: entry.name.clone(),
            source: Box::new(e),
        };
        log::info!("ablation: training `{}`", entry.name);
        let report = match log_dir {
            Some(dir) => {
                let path = dir.join(format!("{i}.tsv"));
                let file = File::create(&path).map_err(|e| wrap(Error::io(&path, e)))?;
                train(&cfg, train_set, val_set, None, &mut BufWriter::new(file))
            }
            None => train(&cfg, train_set, val_set, None, &mut io::sink()),
        }
        .map_err(wrap)?;
        let metrics = report
            .val
            .ok_or_else(|| wrap(Error::Internal("no held-out metrics".into())))?;
        rows.push(AblationRow {
            name: entry.name.clone(),
            variant: cfg.variant.clone(),
            lambda: cfg.lambda,
            params: Model::new(cfg.model_config())?.param_count(),
            final_loss: report.losses.last().map_or(f64::NAN, |l| l.2),
            seconds: report.seconds,
            metrics,
        });
    }
    rows.sort_by(|a, b| a.metrics.rmse.total_cmp(&b.metrics.rmse));
    Ok(rows)
}

pub fn ablation_header() -> String {
    format!(
        "name\tvariant\tlambda\tparams\tfinal_loss\tseconds\t{}",
        TSV_COLUMNS.join("\t")
    )
}

pub fn ablation_tsv(rows: &[AblationRow]) -> String {
    let mut out = ablation_header();
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{:.1}\t{}\n",
            r.name,
            r.variant,
            r.lambda,
            r.params,
            r.final_loss,
            r.seconds,
            r.metrics.tsv_row()
        ));
    }
    out
}
