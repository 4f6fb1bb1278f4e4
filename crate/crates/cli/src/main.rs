//! `lpgd`: data generation, training, evaluation and inspection for the
//! planar-guidance depth model.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lpg_depth::ablation::{ablation_tsv, run_ablation, AblationPlan};
use lpg_depth::checkpoint::Checkpoint;
use lpg_depth::config::RunConfig;
use lpg_depth::gradcheck::{run_suite, GradCaseRegistry, DEFAULT_STEP, DEFAULT_TOLERANCE};
use lpg_depth::metrics::{compute_metrics, EvalConfig, MetricsReport};
use lpg_depth::netpbm::{quantize_range, read_pgm, write_pfm, write_pgm, GrayImage};
use lpg_depth::network::Model;
use lpg_depth::synth::{gen_dataset, load_dataset, Sample};
use lpg_depth::train::{evaluate, split_holdout, train};
use lpg_depth::{Error, Result, Tensor};

#[derive(Parser, Debug)]
#[command(name = "lpgd", version, about = "Planar-guidance monocular depth on synthetic scenes")]
struct Cli {
    /// `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Extra `key=value` config overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset and its manifest.
    GenData {
        /// Output directory (default: the configured `dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of samples (default: the configured `samples`).
        #[arg(short, long)]
        n: Option<usize>,
    },
    /// Train a model and write the final checkpoint.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Dataset directory (default: the configured `dir`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Loss log path (default: `<out>.log.tsv`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a checkpoint on every sample of a dataset.
    Eval {
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        cap_min: Option<f64>,
        #[arg(long)]
        cap_max: Option<f64>,
        /// Score the ground truth against itself.
        #[arg(long)]
        oracle: bool,
        /// Also write the TSV report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict depth for one PGM image; writes `<out>.pfm` and `<out>.pgm`.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the per-scale depth cues and the final depth as PGM images.
    InspectLpg {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable op.
    Gradcheck {
        #[arg(long, default_value_t = 3)]
        points: usize,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Train every ablation variant on one shared split and tabulate.
    Ablate {
        /// Comparison table (TSV).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory for the per-variant loss logs.
        #[arg(long)]
        logs: Option<PathBuf>,
    },
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(Error::InvalidArgument)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn stdout_err(e: io::Error) -> Error {
    Error::Internal(format!("writing to stdout: {e}"))
}

/// Held-out split: `val_dir` when configured, otherwise the tail of the data.
fn load_split(cfg: &RunConfig, data: &Path) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let samples = load_dataset(data)?;
    Ok(match &cfg.val_dir {
        Some(dir) => (samples, load_dataset(dir)?),
        None => split_holdout(samples, cfg.holdout),
    })
}

/// Reads a PGM as a `[1, C, H, W]` batch matching the checkpoint.
fn load_input(model: &Model, path: &Path) -> Result<Tensor> {
    let (img, maxval) = read_pgm(path)?;
    let cfg = model.config();
    if (img.height, img.width) != cfg.input_size {
        return Err(Error::InvalidArgument(format!(
            "{}: image is {}x{} but the checkpoint expects {}x{}",
            path.display(),
            img.height,
            img.width,
            cfg.input_size.0,
            cfg.input_size.1
        )));
    }
    let plane: Vec<f32> = img.data.iter().map(|&v| v as f32 / maxval as f32).collect();
    let data = plane.repeat(cfg.input_channels);
    Tensor::new(vec![1, cfg.input_channels, img.height, img.width], data)
}

fn load_model(path: &Path) -> Result<(Model, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    Ok((Model::new(ck.config.clone())?, ck))
}

fn gray(t: &Tensor, lo: f32, hi: f32) -> Result<GrayImage<u16>> {
    let shape = t.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    GrayImage::new(w, h, quantize_range(t.data(), lo, hi))
}

fn cmd_gen_data(cfg: &RunConfig, out: Option<PathBuf>, n: Option<usize>) -> Result<()> {
    let dir = out.unwrap_or_else(|| cfg.dir.clone());
    let n = n.unwrap_or(cfg.samples);
    gen_dataset(n, &cfg.synth_config(), cfg.seed, &dir)
}

fn cmd_train(cfg: &RunConfig, out: &Path, data: Option<PathBuf>, log_path: Option<PathBuf>) -> Result<()> {
    let data = data.unwrap_or_else(|| cfg.dir.clone());
    let (train_set, val_set) = load_split(cfg, &data)?;
    let log_path = log_path.unwrap_or_else(|| with_suffix(out, ".log.tsv"));
    let mut log = create(&log_path)?;
    let report = train(cfg, &train_set, &val_set, Some(out), &mut log)?;
    if let Some(val) = report.val {
        println!("{}", MetricsReport::tsv_header());
        println!("{}", val.tsv_row());
    }
    log::info!("{} steps in {:.1}s", cfg.steps, report.seconds);
    Ok(())
}

fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    cap: EvalConfig,
    oracle: bool,
    out: Option<PathBuf>,
) -> Result<()> {
    let data = data.unwrap_or_else(|| cfg.dir.clone());
    let samples = load_dataset(&data)?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: dataset is empty", data.display())));
    }
    let report = match checkpoint {
        Some(path) if !oracle => {
            let (model, ck) = load_model(&path)?;
            evaluate(&model, &ck.params, &samples, &cap)?
        }
        _ => {
            let reports = samples
                .iter()
                .map(|s| compute_metrics(&s.depth.data, &s.depth.data, &s.mask, &cap))
                .collect::<Result<Vec<_>>>()?;
            MetricsReport::mean(&reports)?
        }
    };
    let text = format!("{}\n{}\n", MetricsReport::tsv_header(), report.tsv_row());
    io::stdout().write_all(text.as_bytes()).map_err(stdout_err)?;
    if let Some(out) = out {
        write_text(&out, &text)?;
    }
    Ok(())
}

fn cmd_infer(checkpoint: &Path, image: &Path, out: &Path) -> Result<()> {
    let (model, ck) = load_model(checkpoint)?;
    let input = load_input(&model, image)?;
    let depth = model.predict(&ck.params, &input)?.depth;
    let (h, w) = model.config().input_size;
    write_pfm(&with_suffix(out, ".pfm"), &GrayImage::new(w, h, depth.data().to_vec())?)?;
    write_pgm(&with_suffix(out, ".pgm"), &gray(&depth, 0.0, model.config().kappa)?, u16::MAX)
}

fn cmd_inspect_lpg(checkpoint: &Path, image: &Path, out: &Path) -> Result<()> {
    let (model, ck) = load_model(checkpoint)?;
    let input = load_input(&model, image)?;
    let pred = model.predict(&ck.params, &input)?;
    let cues = pred.cues.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "variant `{}` has no planar guidance cues to inspect",
            model.config().variant
        ))
    })?;
    fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let named = ["c8", "c4", "c2", "c1"].into_iter().zip(cues.iter());
    for (name, t) in named.chain(std::iter::once(("depth", &pred.depth))) {
        let (lo, hi) = t
            .data()
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        write_pgm(&out.join(format!("{name}.pgm")), &gray(t, lo, hi)?, u16::MAX)?;
    }
    Ok(())
}

/// Returns whether every case passed.
fn cmd_gradcheck(cfg: &RunConfig, points: usize, tolerance: f64) -> Result<bool> {
    let rows = run_suite(&GradCaseRegistry::builtin(), points, DEFAULT_STEP, tolerance, cfg.seed)?;
    let mut out = io::stdout().lock();
    let mut text = String::from("op\tpoints\tmax_rel_error\tstatus\n");
    for r in &rows {
        text.push_str(&format!(
            "{}\t{}\t{:.3e}\t{}\n",
            r.name,
            r.points,
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" }
        ));
    }
    out.write_all(text.as_bytes()).map_err(stdout_err)?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        eprintln!("gradcheck failed for: {}", failed.join(", "));
    }
    Ok(failed.is_empty())
}

fn cmd_ablate(cfg: &RunConfig, out: &Path, data: Option<PathBuf>, logs: Option<PathBuf>) -> Result<()> {
    let data = data.unwrap_or_else(|| cfg.dir.clone());
    let (train_set, val_set) = load_split(cfg, &data)?;
    if let Some(dir) = &logs {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
    }
    let rows = run_ablation(&AblationPlan::standard(cfg.clone()), &train_set, &val_set, logs.as_deref())?;
    let text = ablation_tsv(&rows);
    write_text(out, &text)?;
    io::stdout().write_all(text.as_bytes()).map_err(stdout_err)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = run_config(&cli)?;
    match cli.command {
        Command::GenData { out, n } => cmd_gen_data(&cfg, out, n)?,
        Command::Train { out, data, log } => cmd_train(&cfg, &out, data, log)?,
        Command::Eval {
            checkpoint,
            data,
            cap_min,
            cap_max,
            oracle,
            out,
        } => {
            let cap = EvalConfig::new(cap_min.unwrap_or(cfg.cap_min), cap_max.unwrap_or(cfg.cap_max))?;
            cmd_eval(&cfg, checkpoint, data, cap, oracle, out)?
        }
        Command::Infer { checkpoint, image, out } => cmd_infer(&checkpoint, &image, &out)?,
        Command::InspectLpg { checkpoint, image, out } => cmd_inspect_lpg(&checkpoint, &image, &out)?,
        Command::Gradcheck { points, tolerance } => {
            if !cmd_gradcheck(&cfg, points, tolerance)? {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Ablate { out, data, logs } => cmd_ablate(&cfg, &out, data, logs)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
