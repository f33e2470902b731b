use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::calendar::extract_temporal_context;
use super::dataset::TrafficDataset;
use super::norm::{instance_normalize, NormStats};
use super::patch::{make_patches, num_patches};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// History/horizon lengths and patching, all in time steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowGeometry {
    pub history: usize,
    pub horizon: usize,
    pub patch_len: usize,
    pub patch_stride: usize,
}

impl WindowGeometry {
    /// One day of history, one day ahead, hour-long patches.
    pub fn one_day(steps_per_day: usize) -> Self {
        let p = (steps_per_day / 24).max(1);
        Self {
            history: steps_per_day,
            horizon: steps_per_day,
            patch_len: p,
            patch_stride: p,
        }
    }

    pub fn hist_tokens(&self) -> Result<usize> {
        num_patches(self.history, self.patch_len, self.patch_stride)
    }

    pub fn fut_tokens(&self) -> Result<usize> {
        num_patches(self.horizon, self.patch_len, self.patch_stride)
    }

    pub fn validate(&self) -> Result<()> {
        self.hist_tokens()?;
        self.fut_tokens()?;
        Ok(())
    }
}

/// One sample: normalized history patches, calendar indices and raw target.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchedWindow {
    /// First forecast step; history covers `[start − H, start)`.
    pub start: usize,
    /// `[R, N_h, P]`.
    pub hist_patches: Tensor,
    pub tod_hist: Vec<usize>,
    pub dow_hist: Vec<usize>,
    pub tod_fut: Vec<usize>,
    pub dow_fut: Vec<usize>,
    /// `[R, F]` in raw units.
    pub target: Tensor,
    pub stats: NormStats,
}

impl PatchedWindow {
    pub fn regions(&self) -> usize {
        self.hist_patches.shape()[0]
    }

    /// Target in the window's normalized space.
    pub fn normalized_target(&self) -> Result<Tensor> {
        super::norm::normalize_with(&self.target, &self.stats)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    /// `count` uniformly random starts drawn from `seed`.
    Train { count: usize, seed: u64 },
    /// Starts at `lo + H`, `lo + H + stride`, … up to `hi − F`.
    Eval { stride: usize },
}

/// Chronological train/validation fractions; the test split is the remainder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.7, val: 0.1 }
    }
}

/// Step ranges per split. Validation and test ranges reach back `H` steps so
/// their first forecast starts right at the split boundary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    /// Leading `fraction` of the training range.
    pub fn train_prefix(&self, fraction: f64) -> Range<usize> {
        0..((self.train.end as f64 * fraction + 1e-9).floor() as usize).min(self.train.end)
    }
}

pub fn split_bounds(steps: usize, ratios: SplitRatios, history: usize) -> Result<Splits> {
    if !(ratios.train > 0.0 && ratios.val >= 0.0 && ratios.train + ratios.val <= 1.0) {
        return Err(Error::Config(format!("invalid split ratios {ratios:?}")));
    }
    // The epsilon keeps 0.7 + 0.1 from flooring to 799 of 1000.
    let cut = |frac: f64| ((steps as f64 * frac + 1e-9).floor() as usize).min(steps);
    let (t1, t2) = (cut(ratios.train), cut(ratios.train + ratios.val));
    Ok(Splits {
        train: 0..t1,
        val: t1.saturating_sub(history)..t2,
        test: t2.saturating_sub(history)..steps,
    })
}

/// Forecast starts available in `span`, or an insufficient-data error.
pub fn window_starts(span: Range<usize>, geom: &WindowGeometry, mode: WindowMode) -> Result<Vec<usize>> {
    geom.validate()?;
    if span.end < span.start + geom.history + geom.horizon {
        return Err(Error::InsufficientData(format!(
            "{} steps cannot hold a window of {} history + {} horizon steps",
            span.end.saturating_sub(span.start),
            geom.history,
            geom.horizon
        )));
    }
    let (first, last) = (span.start + geom.history, span.end - geom.horizon);
    match mode {
        WindowMode::Eval { stride } => {
            if stride == 0 {
                return Err(Error::Param("eval stride must be positive".into()));
            }
            Ok((first..=last).step_by(stride).collect())
        }
        WindowMode::Train { count, seed } => {
            let mut rng = Rng::seed_from(seed);
            Ok((0..count).map(|_| first + rng.below(last - first + 1)).collect())
        }
    }
}

/// Cuts, normalizes and patches the window whose forecast begins at `start`.
pub fn build_window(ds: &TrafficDataset, geom: &WindowGeometry, start: usize) -> Result<PatchedWindow> {
    let (h, f) = (geom.history, geom.horizon);
    if start < h || start + f > ds.steps() {
        return Err(Error::Index(format!(
            "window start {start} needs steps [{}, {}) of {}",
            start as i64 - h as i64,
            start + f,
            ds.steps()
        )));
    }
    let r = ds.regions();
    let slice = |lo: usize, len: usize| -> Result<Tensor> {
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&ds.series(i)[lo..lo + len]);
        }
        Tensor::new(&[r, len], out)
    };
    let (hist, stats) = instance_normalize(&slice(start - h, h)?)?;
    let hist_patches = make_patches(&hist, geom.patch_len, geom.patch_stride)?;
    let offsets = |lo: usize, n: usize| -> Vec<usize> { (0..n).map(|j| lo + j * geom.patch_stride).collect() };
    let (tod_hist, dow_hist) =
        extract_temporal_context(ds.start, ds.sample_rate_minutes, &offsets(start - h, geom.hist_tokens()?));
    let (tod_fut, dow_fut) =
        extract_temporal_context(ds.start, ds.sample_rate_minutes, &offsets(start, geom.fut_tokens()?));
    Ok(PatchedWindow {
        start,
        hist_patches,
        tod_hist,
        dow_hist,
        tod_fut,
        dow_fut,
        target: slice(start, f)?,
        stats,
    })
}

/// Lazily built windows over a dataset.
pub struct Windows<'a> {
    ds: &'a TrafficDataset,
    geom: WindowGeometry,
    starts: std::vec::IntoIter<usize>,
}

impl Windows<'_> {
    pub fn starts(&self) -> &[usize] {
        self.starts.as_slice()
    }
}

impl Iterator for Windows<'_> {
    type Item = Result<PatchedWindow>;

    fn next(&mut self) -> Option<Self::Item> {
        self.starts.next().map(|s| build_window(self.ds, &self.geom, s))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.starts.size_hint()
    }
}

impl ExactSizeIterator for Windows<'_> {}

pub fn make_windows<'a>(ds: &'a TrafficDataset, geom: &WindowGeometry, mode: WindowMode) -> Result<Windows<'a>> {
    make_windows_in(ds, geom, mode, 0..ds.steps())
}

/// Windows whose history and target both lie inside `span`.
pub fn make_windows_in<'a>(
    ds: &'a TrafficDataset,
    geom: &WindowGeometry,
    mode: WindowMode,
    span: Range<usize>,
) -> Result<Windows<'a>> {
    if span.end > ds.steps() {
        return Err(Error::Index(format!("span {span:?} exceeds {} steps", ds.steps())));
    }
    Ok(Windows {
        ds,
        geom: *geom,
        starts: window_starts(span, geom, mode)?.into_iter(),
    })
}
