//! Flat `key = value` run configuration.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `base_width` | 16 | encoder width at H/2 |
//! | `kappa` | 10 | maximum depth |
//! | `input_size` | 64x64 | `HxW`, or one number for square inputs |
//! | `input_channels` | 1 | 1 or 3 |
//! | `aspp_rates` | 3,6,12,18,24 | dilation rates before pruning |
//! | `variant` | full | baseline, aspp, aspp_upconv or full |
//! | `base_lr` | 1e-4 | initial learning rate |
//! | `power` | 0.9 | polynomial decay power |
//! | `steps` | 5000 | optimizer steps |
//! | `batch_size` | 8 | samples per step |
//! | `checkpoint_every` | 0 | periodic checkpoint interval, 0 disables |
//! | `dir` | data | training dataset directory |
//! | `val_dir` | (empty) | held-out dataset; empty means split off `holdout` |
//! | `holdout` | 0.2 | fraction of `dir` held out when `val_dir` is empty |
//! | `samples` | 256 | dataset size for `gen-data` |
//! | `augment` | on | flip and photometric jitter |
//! | `gt_dropout` | 0 | fraction of ground-truth pixels masked out |
//! | `lambda` | 0.85 | variance weight of the loss |
//! | `alpha` | 10 | loss scale |
//! | `min_depth` | 1e-3 | prediction floor inside the loss |
//! | `cap_min` | 1e-3 | evaluation lower cap |
//! | `cap_max` | 10 | evaluation upper cap |
//! | `seed` | 0 | master seed |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::metrics::EvalConfig;
use crate::network::{ModelConfig, DEFAULT_ASPP_RATES};
use crate::optim::LrSchedule;
use crate::synth::SynthConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub base_width: usize,
    pub kappa: f32,
    pub input_size: (usize, usize),
    pub input_channels: usize,
    pub aspp_rates: Vec<usize>,
    pub variant: String,
    pub base_lr: f64,
    pub power: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub checkpoint_every: u64,
    pub dir: PathBuf,
    pub val_dir: Option<PathBuf>,
    pub holdout: f64,
    pub samples: usize,
    pub augment: bool,
    pub gt_dropout: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub min_depth: f64,
    pub cap_min: f64,
    pub cap_max: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            base_width: 16,
            kappa: 10.0,
            input_size: (64, 64),
            input_channels: 1,
            aspp_rates: DEFAULT_ASPP_RATES.to_vec(),
            variant: "full".into(),
            base_lr: 1e-4,
            power: 0.9,
            steps: 5000,
            batch_size: 8,
            checkpoint_every: 0,
            dir: PathBuf::from("data"),
            val_dir: None,
            holdout: 0.2,
            samples: 256,
            augment: true,
            gt_dropout: 0.0,
            lambda: 0.85,
            alpha: 10.0,
            min_depth: 1e-3,
            cap_min: 1e-3,
            cap_max: 10.0,
            seed: 0,
        }
    }
}

pub const KEYS: [&str; 23] = [
    "base_width",
    "kappa",
    "input_size",
    "input_channels",
    "aspp_rates",
    "variant",
    "base_lr",
    "power",
    "steps",
    "batch_size",
    "checkpoint_every",
    "dir",
    "val_dir",
    "holdout",
    "samples",
    "augment",
    "gt_dropout",
    "lambda",
    "alpha",
    "min_depth",
    "cap_min",
    "cap_max",
    "seed",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("`{key}`: cannot parse `{value}`"))
}

fn parse_size(value: &str) -> std::result::Result<(usize, usize), String> {
    let bad = || format!("`input_size`: expected HxW or N, got `{value}`");
    match value.split_once(['x', 'X']) {
        Some((h, w)) => Ok((
            h.trim().parse().map_err(|_| bad())?,
            w.trim().parse().map_err(|_| bad())?,
        )),
        None => {
            let n = value.parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{key}`: expected on/off, got `{value}`")),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: n + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|reason| Error::Config {
                line: n + 1,
                reason,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "base_width" => self.base_width = parse_num(key, value)?,
            "kappa" => self.kappa = parse_num(key, value)?,
            "input_size" => self.input_size = parse_size(value)?,
            "input_channels" => self.input_channels = parse_num(key, value)?,
            "aspp_rates" => {
                self.aspp_rates = value
                    .split(',')
                    .map(|r| parse_num(key, r.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "variant" => self.variant = value.to_string(),
            "base_lr" => self.base_lr = parse_num(key, value)?,
            "power" => self.power = parse_num(key, value)?,
            "steps" => self.steps = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            "dir" => self.dir = PathBuf::from(value),
            "val_dir" => self.val_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            "holdout" => self.holdout = parse_num(key, value)?,
            "samples" => self.samples = parse_num(key, value)?,
            "augment" => self.augment = parse_bool(key, value)?,
            "gt_dropout" => self.gt_dropout = parse_num(key, value)?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "min_depth" => self.min_depth = parse_num(key, value)?,
            "cap_min" => self.cap_min = parse_num(key, value)?,
            "cap_max" => self.cap_max = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.loss_config().validate()?;
        self.eval_config()?;
        self.synth_config().validate()?;
        if !(self.base_lr > 0.0 && self.power >= 0.0) {
            return Err(Error::invalid("base_lr must be > 0 and power >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::invalid(format!("holdout must be in [0, 1), got {}", self.holdout)));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_channels: self.input_channels,
            base_width: self.base_width,
            aspp_rates: self.aspp_rates.clone(),
            kappa: self.kappa,
            input_size: self.input_size,
            variant: self.variant.clone(),
            seed: self.seed,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            alpha: self.alpha,
            min_depth: self.min_depth,
        }
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        EvalConfig::new(self.cap_min, self.cap_max)
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.base_lr,
            power: self.power,
            total_steps: self.steps,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            width: self.input_size.1,
            height: self.input_size.0,
            kappa: self.kappa as f64,
            gt_dropout: self.gt_dropout,
        }
    }

    /// Text form that [`RunConfig::parse`] reads back to an equal value.
    pub fn to_text(&self) -> String {
        let rates: Vec<String> = self.aspp_rates.iter().map(usize::to_string).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("base_width", self.base_width.to_string());
        kv("kappa", self.kappa.to_string());
        kv("input_size", format!("{}x{}", self.input_size.0, self.input_size.1));
        kv("input_channels", self.input_channels.to_string());
        kv("aspp_rates", rates.join(","));
        kv("variant", self.variant.clone());
        kv("base_lr", self.base_lr.to_string());
        kv("power", self.power.to_string());
        kv("steps", self.steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("dir", self.dir.display().to_string());
        kv(
            "val_dir",
            self.val_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        kv("holdout", self.holdout.to_string());
        kv("samples", self.samples.to_string());
        kv("augment", if self.augment { "on" } else { "off" }.to_string());
        kv("gt_dropout", self.gt_dropout.to_string());
        kv("lambda", self.lambda.to_string());
        kv("alpha", self.alpha.to_string());
        kv("min_depth", self.min_depth.to_string());
        kv("cap_min", self.cap_min.to_string());
        kv("cap_max", self.cap_max.to_string());
        kv("seed", self.seed.to_string());
        s
    }
}
