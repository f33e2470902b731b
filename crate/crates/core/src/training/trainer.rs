use std::collections::BTreeMap;
use std::ops::Range;
use std::time::Instant;

use serde::Serialize;

use super::adam::{adam_step, AdamState};
use super::checkpoint::Checkpoint;
use super::TrainConfig;
use crate::data::{build_window, split_bounds, window_starts, PatchedWindow, TrafficDataset, WindowMode};
use crate::error::{Error, Result};
use crate::model::{encode, forward, head, init_params, predict, Bound, GraphContext, ModelConfig, ModelParams};
use crate::numerics::{Rng, Var};

pub const DEFAULT_FINETUNE_EPOCHS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean normalized-space training MAE over the epoch's steps.
    pub train_loss: f64,
    /// Normalized-space MAE on the validation windows, when there are any.
    pub val_mae: Option<f64>,
    /// Cumulative training time, excluding observer callbacks.
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    /// Holds the parameters of the best epoch.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
}

/// Picks a dataset with probability proportional to its weight.
#[derive(Clone, Debug)]
pub struct DatasetSampler {
    cumulative: Vec<usize>,
}

impl DatasetSampler {
    pub fn new(weights: &[usize]) -> Result<Self> {
        let cumulative: Vec<usize> = weights
            .iter()
            .scan(0, |acc, &w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        if cumulative.last().copied().unwrap_or(0) == 0 {
            return Err(Error::InsufficientData("no training windows in any dataset".into()));
        }
        Ok(Self { cumulative })
    }

    pub fn total(&self) -> usize {
        *self.cumulative.last().unwrap()
    }

    pub fn pick(&self, rng: &mut Rng) -> usize {
        let x = rng.below(self.total());
        self.cumulative.partition_point(|&c| c <= x)
    }
}

/// Cached per-dataset state for the training loop.
struct Prepared<'a> {
    ds: &'a TrafficDataset,
    ctx: GraphContext,
    /// Valid training forecast starts.
    starts: Range<usize>,
    /// Non-overlapping training forecast starts.
    windows: Vec<usize>,
    val: Vec<PatchedWindow>,
}

fn prepare<'a>(ds: &'a TrafficDataset, cfg: &ModelConfig, tc: &TrainConfig) -> Result<Prepared<'a>> {
    ds.validate()?;
    cfg.check_dataset(ds)?;
    let geom = cfg.geometry;
    let splits = split_bounds(ds.steps(), tc.split, geom.history)?;
    let span = splits.train_prefix(tc.train_fraction);
    let train = window_starts(span.clone(), &geom, WindowMode::Eval { stride: geom.horizon }).map_err(|e| {
        Error::InsufficientData(format!("training split of '{}' ({span:?}): {e}", ds.name))
    })?;
    let val = match window_starts(splits.val, &geom, WindowMode::Eval { stride: geom.horizon }) {
        Ok(starts) => starts.into_iter().map(|s| build_window(ds, &geom, s)).collect::<Result<_>>()?,
        Err(Error::InsufficientData(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    Ok(Prepared {
        ds,
        ctx: GraphContext::from_dataset(ds, cfg.k)?,
        starts: span.start + geom.history..span.end - geom.horizon + 1,
        windows: train,
        val,
    })
}

/// Mean normalized-space MAE of eval-mode predictions.
pub fn normalized_mae(params: &ModelParams, cfg: &ModelConfig, ctx: &GraphContext, windows: &[PatchedWindow]) -> Result<f64> {
    let mut total = 0.0;
    for w in windows {
        let pred = predict(w, ctx, params, cfg)?;
        let target = w.normalized_target()?;
        total += pred.data().iter().zip(target.data()).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64;
    }
    Ok(total / windows.len().max(1) as f64)
}

fn collect_grads(bound: &Bound, names: impl Fn(&str) -> bool) -> BTreeMap<String, Vec<f64>> {
    bound
        .iter()
        .filter(|(n, v)| names(n) && v.requires_grad())
        .map(|(n, v)| (n.clone(), v.grad().unwrap_or_else(|| vec![0.0; v.value().len()])))
        .collect()
}

fn check_finite(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Training(format!("loss diverged to {loss} in epoch {epoch}")))
    }
}

pub fn pretrain(datasets: &[TrafficDataset], cfg: &ModelConfig, tc: &TrainConfig) -> Result<PretrainOutcome> {
    pretrain_with(datasets, cfg, tc, |_, _| Ok(true))
}

/// Multi-dataset pre-training. Each step draws one dataset in proportion to
/// its count of non-overlapping training windows and a batch of random
/// windows from it; an epoch is that total count divided by the batch size.
/// Early stopping watches validation MAE (training loss when no dataset has
/// a validation window). `observer` runs after every epoch and may stop
/// training by returning `false`; its time is excluded from the statistics.
pub fn pretrain_with(
    datasets: &[TrafficDataset],
    cfg: &ModelConfig,
    tc: &TrainConfig,
    mut observer: impl FnMut(&EpochStats, &ModelParams) -> Result<bool>,
) -> Result<PretrainOutcome> {
    if datasets.is_empty() {
        return Err(Error::Data("pre-training needs at least one dataset".into()));
    }
    tc.validate()?;
    cfg.validate()?;
    let prepared: Vec<Prepared> = datasets.iter().map(|ds| prepare(ds, cfg, tc)).collect::<Result<_>>()?;
    let sampler = DatasetSampler::new(&prepared.iter().map(|p| p.windows.len()).collect::<Vec<_>>())?;
    let steps = sampler.total().div_ceil(tc.batch_size);
    let has_val = prepared.iter().any(|p| !p.val.is_empty());

    let mut params = init_params(cfg, tc.seed)?;
    let mut rng = Rng::fork(tc.seed, 1);
    let mut optimizer = AdamState::default();
    let mut history = Vec::new();
    let (mut best, mut best_params, mut best_epoch, mut stale) = (f64::INFINITY, params.clone(), 0, 0);
    let mut elapsed = 0.0;

    for epoch in 1..=tc.max_epochs {
        let clock = Instant::now();
        let step_tc = TrainConfig {
            lr: tc.lr_at(epoch),
            ..tc.clone()
        };
        let mut epoch_loss = 0.0;
        for _ in 0..steps {
            let p = &prepared[sampler.pick(&mut rng)];
            let bound = params.bind_all();
            let mut step_loss = 0.0;
            for _ in 0..tc.batch_size {
                let start = p.starts.start + rng.below(p.starts.len());
                let w = build_window(p.ds, &cfg.geometry, start)?;
                let out = forward(&w, &p.ctx, &bound, cfg, true, &mut rng)?;
                let loss = out.mae(&w.normalized_target()?)?.scale(1.0 / tc.batch_size as f64);
                loss.backward()?;
                step_loss += loss.item();
            }
            check_finite(step_loss, epoch)?;
            epoch_loss += step_loss;
            adam_step(&mut params, &collect_grads(&bound, |_| true), &mut optimizer, &step_tc)?;
        }
        let train_loss = epoch_loss / steps as f64;
        let val_mae = if has_val {
            let (mut sum, mut n) = (0.0, 0);
            for p in prepared.iter().filter(|p| !p.val.is_empty()) {
                sum += normalized_mae(&params, cfg, &p.ctx, &p.val)? * p.val.len() as f64;
                n += p.val.len();
            }
            Some(sum / n as f64)
        } else {
            None
        };
        elapsed += clock.elapsed().as_secs_f64();
        let stats = EpochStats {
            epoch,
            train_loss,
            val_mae,
            seconds: elapsed,
        };
        let metric = val_mae.unwrap_or(train_loss);
        check_finite(metric, epoch)?;
        if metric < best {
            (best, best_params, best_epoch, stale) = (metric, params.clone(), epoch, 0);
        } else {
            stale += 1;
        }
        history.push(stats.clone());
        if !observer(&stats, &params)? || stale >= tc.early_stop_patience {
            break;
        }
    }

    Ok(PretrainOutcome {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            params: best_params,
            optimizer,
            epoch: history.len(),
            rng: rng.state(),
        },
        history,
        best_epoch,
    })
}

fn is_head(name: &str) -> bool {
    name.starts_with("head.")
}

/// Updates only the prediction head for at most `max_epochs` epochs. Like
/// pre-training, an epoch is the count of non-overlapping training windows
/// divided by the batch size, and each step draws random window starts so
/// the head sees every phase of the day. The frozen body runs in eval mode.
pub fn finetune_head(ckpt: &Checkpoint, ds: &TrafficDataset, max_epochs: usize, tc: &TrainConfig) -> Result<FinetuneOutcome> {
    tc.validate()?;
    let cfg = &ckpt.config;
    let p = prepare(ds, cfg, tc)?;
    let steps = p.windows.len().div_ceil(tc.batch_size);
    let clock = Instant::now();
    let frozen = ckpt.params.bind_constants();
    let mut rng = Rng::fork(tc.seed, 2);
    let mut params = ckpt.params.clone();
    let mut optimizer = AdamState::default();
    let mut history = Vec::new();
    for epoch in 1..=max_epochs {
        let step_tc = TrainConfig {
            lr: tc.lr_at(epoch),
            ..tc.clone()
        };
        let mut epoch_loss = 0.0;
        for _ in 0..steps {
            let bound = Bound::from_vars(
                params
                    .iter()
                    .filter(|(n, _)| is_head(n))
                    .map(|(n, t)| (n.clone(), Var::parameter(t)))
                    .collect(),
            );
            let mut step_loss = 0.0;
            for _ in 0..tc.batch_size {
                let start = p.starts.start + rng.below(p.starts.len());
                let w = build_window(ds, &cfg.geometry, start)?;
                let features = encode(&w, &p.ctx, &frozen, cfg, false, &mut rng)?;
                let out = head(&Var::constant(features.value().clone()), &bound)?;
                let loss = out.mae(&w.normalized_target()?)?.scale(1.0 / tc.batch_size as f64);
                loss.backward()?;
                step_loss += loss.item();
            }
            check_finite(step_loss, epoch)?;
            adam_step(&mut params, &collect_grads(&bound, is_head), &mut optimizer, &step_tc)?;
            epoch_loss += step_loss;
        }
        history.push(EpochStats {
            epoch,
            train_loss: epoch_loss / steps as f64,
            val_mae: None,
            seconds: clock.elapsed().as_secs_f64(),
        });
    }
    Ok(FinetuneOutcome {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            params,
            optimizer,
            epoch: ckpt.epoch,
            rng: rng.state(),
        },
        history,
    })
}
