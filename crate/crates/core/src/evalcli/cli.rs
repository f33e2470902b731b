//! Command-line surface. Every subcommand reads a JSON config (`--config`),
//! accepts `--seed` and writes its artifacts under `--out`. Relative paths
//! inside a config resolve against the config file's directory.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::drivers::{export_predictions, measure_latency, scaling_experiment, zero_shot_eval, EvalOptions, ScalingSetup};
use crate::data::{generate_synthetic_city, load_dataset, save_dataset, MatrixFormat, SyntheticSpec, TrafficDataset};
use crate::error::{Error, Result};
use crate::model::{Ablations, ModelConfig, Preset};
use crate::training::{finetune_head, load_checkpoint, pretrain_with, save_checkpoint, TrainConfig, DEFAULT_FINETUNE_EPOCHS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;

pub const CHECKPOINT_FILE: &str = "checkpoint.ockpt";

#[derive(Parser)]
#[command(name = "opencity", version, about = "Zero-shot spatio-temporal traffic forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic cities.
    Synth(Common),
    /// Pre-train a model on one or more datasets.
    Pretrain(Common),
    /// Score a checkpoint on an unseen dataset against two baselines.
    EvalZeroshot {
        #[command(flatten)]
        common: Common,
        /// Average percentage errors over every nonzero target.
        #[arg(long)]
        unmasked_mape: bool,
    },
    /// Fine-tune only the prediction head on a new dataset.
    Finetune(Common),
    /// Train and score the preset × data-fraction grid.
    Scaling(Common),
    /// Time one full-region one-day-ahead forecast.
    Latency(Common),
    /// Export denormalized forecasts as CSV.
    Predict(Common),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthConfig {
    cities: Vec<SyntheticSpec>,
    #[serde(default)]
    format: MatrixFormat,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PretrainConfig {
    datasets: Vec<PathBuf>,
    /// Full model config; takes precedence over `preset`.
    model: Option<ModelConfig>,
    /// Preset with one-day geometry at the first dataset's sample rate.
    #[serde(default)]
    preset: Option<Preset>,
    ablations: Option<Ablations>,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    impute: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    checkpoint: PathBuf,
    dataset: PathBuf,
    #[serde(default)]
    eval: EvalOptions,
    #[serde(default)]
    impute: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FinetuneConfig {
    checkpoint: PathBuf,
    dataset: PathBuf,
    #[serde(default = "default_finetune_epochs")]
    max_epochs: usize,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    impute: bool,
}

fn default_finetune_epochs() -> usize {
    DEFAULT_FINETUNE_EPOCHS
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalingConfig {
    corpus: Vec<PathBuf>,
    held_out: PathBuf,
    #[serde(default)]
    setup: ScalingSetup,
    #[serde(default)]
    impute: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LatencyConfig {
    checkpoint: PathBuf,
    dataset: PathBuf,
    #[serde(default = "default_repeats")]
    repeats: usize,
}

fn default_repeats() -> usize {
    5
}

/// Maps an error to its exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Training(_) | Error::Evaluation(_) => EXIT_TRAINING,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn resolve(config: &Path, p: &Path) -> PathBuf {
    match config.parent() {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

fn write_json(out: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn load_all(config: &Path, paths: &[PathBuf], impute: bool) -> Result<Vec<TrafficDataset>> {
    paths.iter().map(|p| load_dataset(&resolve(config, p), impute)).collect()
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(c) => synth(&c),
        Command::Pretrain(c) => pretrain_cmd(&c),
        Command::EvalZeroshot { common, unmasked_mape } => eval_zeroshot(&common, unmasked_mape),
        Command::Finetune(c) => finetune_cmd(&c),
        Command::Scaling(c) => scaling_cmd(&c),
        Command::Latency(c) => latency_cmd(&c),
        Command::Predict(c) => predict_cmd(&c),
    }
}

fn synth(c: &Common) -> Result<()> {
    let cfg: SynthConfig = read_config(&c.config)?;
    for (i, spec) in cfg.cities.iter().enumerate() {
        let mut spec = spec.clone();
        if let Some(seed) = c.seed {
            spec.seed = seed.wrapping_add(i as u64);
        }
        let ds = generate_synthetic_city(&spec)?;
        let dir = c.out.join(&spec.name);
        save_dataset(&ds, &dir, cfg.format)?;
        eprintln!("wrote {} ({} regions × {} steps)", dir.display(), ds.regions(), ds.steps());
    }
    Ok(())
}

fn pretrain_cmd(c: &Common) -> Result<()> {
    let cfg: PretrainConfig = read_config(&c.config)?;
    let datasets = load_all(&c.config, &cfg.datasets, cfg.impute)?;
    let first = datasets
        .first()
        .ok_or_else(|| Error::Config("pretrain config lists no datasets".into()))?;
    let mut model = match cfg.model {
        Some(m) => m,
        None => ModelConfig::preset(cfg.preset.unwrap_or(Preset::Mini), first.sample_rate_minutes)?,
    };
    if let Some(a) = cfg.ablations {
        model.ablations = a;
    }
    let mut train = cfg.train;
    if let Some(seed) = c.seed {
        train.seed = seed;
    }
    let out = pretrain_with(&datasets, &model, &train, |s, _| {
        eprintln!(
            "epoch {:>3}  train {:.5}  val {}",
            s.epoch,
            s.train_loss,
            s.val_mae.map_or("-".into(), |v| format!("{v:.5}"))
        );
        Ok(true)
    })?;
    save_checkpoint(&out.checkpoint, &c.out.join(CHECKPOINT_FILE))?;
    write_json(&c.out, "history.json", &out.history)
}

fn eval_zeroshot(c: &Common, unmasked_mape: bool) -> Result<()> {
    let cfg: EvalConfig = read_config(&c.config)?;
    let ckpt = load_checkpoint(&resolve(&c.config, &cfg.checkpoint))?;
    let ds = load_dataset(&resolve(&c.config, &cfg.dataset), cfg.impute)?;
    let opts = EvalOptions {
        unmasked_mape: cfg.eval.unmasked_mape || unmasked_mape,
        ..cfg.eval
    };
    let report = zero_shot_eval(&ckpt, &ds, &opts)?;
    eprintln!(
        "MAE {:.4} (history mean {:.4}, seasonal naive {:.4}) over {} windows",
        report.model.mae, report.history_mean.mae, report.seasonal_naive.mae, report.model.num_windows
    );
    write_json(&c.out, "zeroshot.json", &report)
}

fn finetune_cmd(c: &Common) -> Result<()> {
    let cfg: FinetuneConfig = read_config(&c.config)?;
    let ckpt = load_checkpoint(&resolve(&c.config, &cfg.checkpoint))?;
    let ds = load_dataset(&resolve(&c.config, &cfg.dataset), cfg.impute)?;
    let mut train = cfg.train;
    if let Some(seed) = c.seed {
        train.seed = seed;
    }
    let out = finetune_head(&ckpt, &ds, cfg.max_epochs, &train)?;
    save_checkpoint(&out.checkpoint, &c.out.join(CHECKPOINT_FILE))?;
    write_json(&c.out, "finetune_history.json", &out.history)
}

fn scaling_cmd(c: &Common) -> Result<()> {
    let cfg: ScalingConfig = read_config(&c.config)?;
    let corpus = load_all(&c.config, &cfg.corpus, cfg.impute)?;
    let held_out = load_dataset(&resolve(&c.config, &cfg.held_out), cfg.impute)?;
    let mut setup = cfg.setup;
    if let Some(seed) = c.seed {
        setup.train.seed = seed;
    }
    let rows = scaling_experiment(&corpus, &held_out, &setup)?;
    fs::create_dir_all(&c.out).map_err(|e| Error::io(&c.out, e))?;
    let path = c.out.join("scaling.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["preset", "fraction", "parameters", "mae", "relative_error"])?;
    for r in &rows {
        w.write_record([
            format!("{:?}", r.preset).to_lowercase(),
            r.fraction.to_string(),
            r.parameters.to_string(),
            r.mae.to_string(),
            r.relative_error.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_json(&c.out, "scaling.json", &rows)
}

fn latency_cmd(c: &Common) -> Result<()> {
    let cfg: LatencyConfig = read_config(&c.config)?;
    let ckpt = load_checkpoint(&resolve(&c.config, &cfg.checkpoint))?;
    let ds = load_dataset(&resolve(&c.config, &cfg.dataset), false)?;
    let report = measure_latency(&ckpt, &ds, cfg.repeats)?;
    eprintln!("median {:.3} s over {} repeats, {} regions", report.median_seconds, cfg.repeats, report.regions);
    write_json(&c.out, "latency.json", &report)
}

fn predict_cmd(c: &Common) -> Result<()> {
    let cfg: EvalConfig = read_config(&c.config)?;
    let ckpt = load_checkpoint(&resolve(&c.config, &cfg.checkpoint))?;
    let ds = load_dataset(&resolve(&c.config, &cfg.dataset), cfg.impute)?;
    let rows = export_predictions(&ckpt, &ds, &c.out.join("predictions.csv"), &cfg.eval)?;
    eprintln!("wrote {rows} predictions");
    Ok(())
}
