//! Training loop, held-out evaluation and the TSV loss log.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, EvalConfig, MetricsReport};
use crate::network::Model;
use crate::optim::{adam_step, poly_lr, AdamState};
use crate::params::{Bindings, ParamSet};
use crate::synth::{augment, Sample};
use crate::tensor::Tensor;

/// Stream offset separating the data-order RNG from parameter init.
const DATA_STREAM: u64 = 0x5eed_da7a;

pub const LOG_HEADER: &str = "step\tlr\tloss";

#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, C, H, W]`.
    pub input: Tensor,
    pub depth: Vec<f32>,
    pub mask: Vec<bool>,
}

pub fn make_batch(samples: &[&Sample], channels: usize) -> Result<Batch> {
    let mut images = Vec::with_capacity(samples.len());
    let mut depth = Vec::new();
    let mut mask = Vec::new();
    for s in samples {
        images.push((*s).clone().with_channels(channels)?.image);
        depth.extend_from_slice(&s.depth.data);
        mask.extend_from_slice(&s.mask);
    }
    let refs: Vec<&Tensor> = images.iter().collect();
    Ok(Batch {
        input: Tensor::stack(&refs)?,
        depth,
        mask,
    })
}

/// Splits off the last `fraction` of `samples` as a held-out set.
pub fn split_holdout(mut samples: Vec<Sample>, fraction: f64) -> (Vec<Sample>, Vec<Sample>) {
    let n_val = ((samples.len() as f64) * fraction).round() as usize;
    let val = samples.split_off(samples.len() - n_val.min(samples.len()));
    (samples, val)
}

fn check_sizes(model: &Model, samples: &[Sample]) -> Result<()> {
    let (h, w) = model.config().input_size;
    match samples.iter().find(|s| (s.height(), s.width()) != (h, w)) {
        Some(s) => Err(Error::invalid(format!(
            "sample is {}x{} but the model expects {h}x{w}",
            s.height(),
            s.width()
        ))),
        None => Ok(()),
    }
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub model: Model,
    pub params: ParamSet,
    pub adam: AdamState,
    pub step: u64,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.model_config())?;
        let params = model.init_params(cfg.seed);
        Ok(Self {
            cfg: cfg.clone(),
            model,
            params,
            adam: AdamState::new(),
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ DATA_STREAM),
            order: Vec::new(),
            cursor: 0,
        })
    }

    fn next_indices(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.cfg.batch_size);
        while out.len() < self.cfg.batch_size {
            if self.cursor == self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// One optimizer step; returns `(lr, loss)`.
    pub fn step(&mut self, data: &[Sample]) -> Result<(f64, f64)> {
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let idx = self.next_indices(data.len());
        let picked: Vec<Sample> = idx
            .iter()
            .map(|&i| {
                if self.cfg.augment {
                    augment(&data[i], &mut self.rng)
                } else {
                    data[i].clone()
                }
            })
            .collect();
        let refs: Vec<&Sample> = picked.iter().collect();
        let batch = make_batch(&refs, self.cfg.input_channels)?;

        let lr = poly_lr(&self.cfg.schedule(), self.step);
        let mut graph = Graph::new();
        let x = graph.constant(batch.input);
        let mut bindings = Bindings::default();
        let out = self.model.forward(&mut graph, &self.params, &mut bindings, x)?;
        let (loss, breakdown) = graph.silog(out.depth, &batch.depth, &batch.mask, &self.cfg.loss_config())?;
        if !breakdown.l.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step });
        }
        let grads = graph.backward(loss)?;
        self.params.zero_grad();
        bindings.accumulate(&grads, &mut self.params)?;
        adam_step(&mut self.params, &mut self.adam, lr)?;
        self.step += 1;
        Ok((lr, breakdown.l))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.model.config().clone(),
            self.params.clone(),
            self.adam.clone(),
            self.step,
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// `(step, lr, loss)` per step.
    pub losses: Vec<(u64, f64, f64)>,
    pub val: Option<MetricsReport>,
    pub checkpoint: Checkpoint,
    pub seconds: f64,
}

/// Path of the periodic checkpoint written after `step` steps.
pub fn periodic_path(out: &Path, step: u64) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(format!(".step{step}"));
    PathBuf::from(s)
}

/// Runs the whole step budget, writing the loss log to `log` and checkpoints
/// next to `out`. The held-out evaluation is appended as `#` lines.
pub fn train(
    cfg: &RunConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    out: Option<&Path>,
    log: &mut dyn Write,
) -> Result<TrainReport> {
    let mut trainer = Trainer::new(cfg)?;
    check_sizes(&trainer.model, train_set)?;
    check_sizes(&trainer.model, val_set)?;
    let io = |e| Error::Internal(format!("writing loss log: {e}"));
    writeln!(log, "{LOG_HEADER}").map_err(io)?;
    let start = Instant::now();
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let (lr, loss) = trainer.step(train_set)?;
        writeln!(log, "{step}\t{lr:.6e}\t{loss:.6}").map_err(io)?;
        losses.push((step, lr, loss));
        if (step + 1) % 250 == 0 {
            log::info!(
                "step {} loss {loss:.4} ({:.1}s)",
                step + 1,
                start.elapsed().as_secs_f64()
            );
        }
        if let Some(out) = out {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps {
                trainer.checkpoint().save(&periodic_path(out, step + 1))?;
            }
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let checkpoint = trainer.checkpoint();
    if let Some(out) = out {
        checkpoint.save(out)?;
    }
    let val = if val_set.is_empty() {
        None
    } else {
        let report = evaluate(&trainer.model, &trainer.params, val_set, &cfg.eval_config()?)?;
        writeln!(log, "# eval\t{}", MetricsReport::tsv_header()).map_err(io)?;
        writeln!(log, "# eval\t{}", report.tsv_row()).map_err(io)?;
        Some(report)
    };
    log.flush().map_err(io)?;
    Ok(TrainReport {
        losses,
        val,
        checkpoint,
        seconds,
    })
}

/// Predicted depth for every sample, in order.
pub fn predict_all(model: &Model, params: &ParamSet, samples: &[Sample]) -> Result<Vec<Vec<f32>>> {
    check_sizes(model, samples)?;
    let channels = model.config().input_channels;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(8) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = make_batch(&refs, channels)?;
        let pred = model.predict(params, &batch.input)?;
        let per = pred.depth.numel() / chunk.len();
        out.extend(pred.depth.data().chunks_exact(per).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Per-image metrics averaged over `samples`.
pub fn evaluate(model: &Model, params: &ParamSet, samples: &[Sample], cfg: &EvalConfig) -> Result<MetricsReport> {
    let preds = predict_all(model, params, samples)?;
    let reports = preds
        .iter()
        .zip(samples)
        .map(|(p, s)| compute_metrics(p, &s.depth.data, &s.mask, cfg))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::mean(&reports)
}
