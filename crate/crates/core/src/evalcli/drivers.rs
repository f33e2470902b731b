use std::path::Path;
use std::time::Instant;

use chrono::SecondsFormat;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MapeMask, MetricsReport};
use crate::data::{build_window, denormalize, step_time, NormStats, split_bounds, window_starts, SplitRatios, TrafficDataset, WindowMode};
use crate::error::{Error, Result};
use crate::model::{count_parameters, predict, GraphContext, ModelConfig, ModelParams, Preset};
use crate::numerics::Tensor;
use crate::training::{pretrain, Checkpoint, TrainConfig};

/// Relative MAPE floor, in normalized units.
pub const MAPE_FLOOR_SIGMAS: f64 = 1e-3;

/// Which part of a dataset is scored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSpan {
    /// Every non-overlapping window of the series.
    #[default]
    Full,
    /// Non-overlapping windows of the test split only.
    Test,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub span: EvalSpan,
    /// Split used when `span` is `test`.
    pub split: SplitRatios,
    /// Average the percentage error over every nonzero target.
    pub unmasked_mape: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZeroShotReport {
    pub model: MetricsReport,
    /// Each region's history mean repeated over the horizon.
    pub history_mean: MetricsReport,
    /// The value one day earlier.
    pub seasonal_naive: MetricsReport,
    /// Raw-unit MAPE floor shared by the three reports.
    pub mape_floor: f64,
}

/// Denormalized predictions for one forecast window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowForecast {
    pub start: usize,
    /// `[R, F]` raw units.
    pub values: Tensor,
    /// `[R, F]` raw units.
    pub target: Tensor,
    pub stats: NormStats,
}

fn eval_starts(ds: &TrafficDataset, cfg: &ModelConfig, opts: &EvalOptions) -> Result<Vec<usize>> {
    let geom = cfg.geometry;
    let span = match opts.span {
        EvalSpan::Full => 0..ds.steps(),
        EvalSpan::Test => split_bounds(ds.steps(), opts.split, geom.history)?.test,
    };
    window_starts(span, &geom, WindowMode::Eval { stride: geom.horizon })
}

/// Eval-mode forecasts over the non-overlapping windows selected by `opts`.
pub fn forecast(params: &ModelParams, cfg: &ModelConfig, ds: &TrafficDataset, opts: &EvalOptions) -> Result<Vec<WindowForecast>> {
    ds.validate()?;
    cfg.check_dataset(ds)?;
    let ctx = GraphContext::from_dataset(ds, cfg.k)?;
    eval_starts(ds, cfg, opts)?
        .into_iter()
        .map(|start| {
            let w = build_window(ds, &cfg.geometry, start)?;
            let values = denormalize(&predict(&w, &ctx, params, cfg)?, &w.stats)?;
            Ok(WindowForecast {
                start,
                values,
                target: w.target,
                stats: w.stats,
            })
        })
        .collect()
}

fn stack(parts: impl Iterator<Item = Tensor>, shape: [usize; 3]) -> Result<Tensor> {
    Tensor::new(&shape, parts.flat_map(|t| t.data().to_vec()).collect())
}

fn history_mean(ds: &TrafficDataset, start: usize, history: usize, horizon: usize) -> Tensor {
    let r = ds.regions();
    Tensor::from_fn(&[r, horizon], |i| {
        let h = &ds.series(i / horizon)[start - history..start];
        h.iter().sum::<f64>() / history as f64
    })
}

/// `ŷ[s + f] = x[s + f − lag·(1 + ⌊f/lag⌋)]`: yesterday's value, with the last
/// observed day repeated for horizons longer than a day.
fn seasonal_naive(ds: &TrafficDataset, start: usize, lag: usize, horizon: usize) -> Tensor {
    Tensor::from_fn(&[ds.regions(), horizon], |i| {
        let f = i % horizon;
        ds.series(i / horizon)[start + f - lag * (1 + f / lag)]
    })
}

/// Scores `params` on `ds` together with the history-mean and seasonal-naive
/// baselines over the same windows. Parameters are only read.
pub fn evaluate(params: &ModelParams, cfg: &ModelConfig, ds: &TrafficDataset, opts: &EvalOptions) -> Result<ZeroShotReport> {
    cfg.check_dataset(ds)?;
    let geom = cfg.geometry;
    let lag = ds.steps_per_day();
    if geom.history < lag {
        return Err(Error::Config(format!(
            "history of {} steps is shorter than the one-day seasonal lag of {lag}",
            geom.history
        )));
    }
    let clock = Instant::now();
    let forecasts = forecast(params, cfg, ds, opts)?;
    let seconds = clock.elapsed().as_secs_f64();

    let (r, f) = (ds.regions(), geom.horizon);
    let shape = [forecasts.len(), r, f];
    let target = stack(forecasts.iter().map(|w| w.target.clone()), shape)?;
    let sigmas: Vec<f64> = forecasts.iter().flat_map(|w| w.stats.sigma.iter().copied()).collect();
    let mape_floor = MAPE_FLOOR_SIGMAS * sigmas.iter().sum::<f64>() / sigmas.len() as f64;
    let mask = if opts.unmasked_mape {
        MapeMask::Unmasked
    } else {
        MapeMask::Floor(mape_floor)
    };

    let mut model = compute_metrics(&stack(forecasts.iter().map(|w| w.values.clone()), shape)?, &target, mask)?;
    model.wall_clock_seconds = seconds;
    let hm = stack(forecasts.iter().map(|w| history_mean(ds, w.start, geom.history, f)), shape)?;
    let sn = stack(forecasts.iter().map(|w| seasonal_naive(ds, w.start, lag, f)), shape)?;
    Ok(ZeroShotReport {
        model,
        history_mean: compute_metrics(&hm, &target, mask)?,
        seasonal_naive: compute_metrics(&sn, &target, mask)?,
        mape_floor,
    })
}

/// Evaluates a checkpoint on a dataset it was not trained on.
pub fn zero_shot_eval(ckpt: &Checkpoint, ds: &TrafficDataset, opts: &EvalOptions) -> Result<ZeroShotReport> {
    evaluate(&ckpt.params, &ckpt.config, ds, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingSetup {
    /// Geometry, context width and regularization shared by every cell; the
    /// preset only decides width, heads and depth.
    pub template: ModelConfig,
    pub presets: Vec<Preset>,
    pub fractions: Vec<f64>,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl Default for ScalingSetup {
    fn default() -> Self {
        Self {
            template: ModelConfig::preset(Preset::Mini, 5).expect("mini preset is valid"),
            presets: vec![Preset::Mini, Preset::Base, Preset::Plus],
            fractions: vec![0.1, 0.5, 1.0],
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub preset: Preset,
    pub fraction: f64,
    pub parameters: usize,
    pub best_epoch: usize,
    pub mae: f64,
    /// `mae` divided by the MAE of the largest preset on the largest fraction.
    pub relative_error: f64,
    pub train_seconds: f64,
}

/// Trains one model per (preset, fraction) cell with the same protocol and
/// scores each zero-shot on `held_out`. Fractions are leading shares of
/// every dataset's training split.
pub fn scaling_experiment(corpus: &[TrafficDataset], held_out: &TrafficDataset, setup: &ScalingSetup) -> Result<Vec<ScalingRow>> {
    if setup.presets.is_empty() || setup.fractions.is_empty() {
        return Err(Error::Config("scaling grid needs at least one preset and one fraction".into()));
    }
    let mut rows = Vec::new();
    for &preset in &setup.presets {
        let (d, heads, layers) = preset
            .dims()
            .ok_or_else(|| Error::Config("scaling presets must be mini, base or plus".into()))?;
        let cfg = ModelConfig {
            preset,
            d,
            heads,
            layers,
            ..setup.template.clone()
        };
        for &fraction in &setup.fractions {
            let tc = TrainConfig {
                train_fraction: fraction,
                ..setup.train.clone()
            };
            let clock = Instant::now();
            let out = pretrain(corpus, &cfg, &tc)?;
            let train_seconds = clock.elapsed().as_secs_f64();
            let report = evaluate(&out.checkpoint.params, &cfg, held_out, &setup.eval)?;
            rows.push(ScalingRow {
                preset,
                fraction,
                parameters: count_parameters(&cfg).total,
                best_epoch: out.best_epoch,
                mae: report.model.mae,
                relative_error: f64::NAN,
                train_seconds,
            });
        }
    }
    let reference = rows
        .iter()
        .max_by(|a, b| (a.parameters, a.fraction).partial_cmp(&(b.parameters, b.fraction)).expect("finite fractions"))
        .map(|r| r.mae)
        .expect("grid is non-empty");
    if !(reference > 0.0) {
        return Err(Error::Evaluation(format!("reference cell MAE {reference} cannot normalize the grid")));
    }
    for row in &mut rows {
        row.relative_error = row.mae / reference;
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyReport {
    pub median_seconds: f64,
    pub samples: Vec<f64>,
    pub regions: usize,
}

/// Median wall-clock of one full-region forecast of the last window in
/// `ds`, from the patched history to denormalized values.
pub fn measure_latency(ckpt: &Checkpoint, ds: &TrafficDataset, repeats: usize) -> Result<LatencyReport> {
    if repeats == 0 {
        return Err(Error::Config("latency needs at least one repeat".into()));
    }
    let cfg = &ckpt.config;
    cfg.check_dataset(ds)?;
    let geom = cfg.geometry;
    if ds.steps() < geom.history + geom.horizon {
        return Err(Error::InsufficientData(format!(
            "{} steps cannot hold a {}+{} window",
            ds.steps(),
            geom.history,
            geom.horizon
        )));
    }
    let ctx = GraphContext::from_dataset(ds, cfg.k)?;
    let w = build_window(ds, &geom, ds.steps() - geom.horizon)?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let clock = Instant::now();
        let pred = denormalize(&predict(&w, &ctx, &ckpt.params, cfg)?, &w.stats)?;
        samples.push(clock.elapsed().as_secs_f64());
        std::hint::black_box(pred);
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median_seconds = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok(LatencyReport {
        median_seconds,
        samples,
        regions: ds.regions(),
    })
}

/// Writes `region_index,timestamp_iso,predicted_value` rows for every
/// forecast step of every evaluation window; returns the row count.
pub fn export_predictions(ckpt: &Checkpoint, ds: &TrafficDataset, path: &Path, opts: &EvalOptions) -> Result<usize> {
    let forecasts = forecast(&ckpt.params, &ckpt.config, ds, opts)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = csv::Writer::from_writer(file);
    out.write_record(["region_index", "timestamp_iso", "predicted_value"])?;
    let horizon = ckpt.config.geometry.horizon;
    let mut rows = 0;
    for w in &forecasts {
        for (i, v) in w.values.data().iter().enumerate() {
            let (region, f) = (i / horizon, i % horizon);
            let t = step_time(ds.start, ds.sample_rate_minutes, w.start + f);
            out.write_record([
                region.to_string(),
                t.to_rfc3339_opts(SecondsFormat::Secs, true),
                v.to_string(),
            ])?;
            rows += 1;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(rows)
}
