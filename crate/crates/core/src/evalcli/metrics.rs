use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Which targets enter the MAPE average.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MapeMask {
    /// Only targets with `|y| > floor`.
    Floor(f64),
    /// Every nonzero target, however small.
    Unmasked,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    /// Percent; `None` when no target passes the MAPE mask.
    pub mape: Option<f64>,
    /// MAE per future step, length `F`.
    pub per_horizon_mae: Vec<f64>,
    pub wall_clock_seconds: f64,
    pub num_windows: usize,
    pub num_regions: usize,
}

/// Pairwise summation keeps the result independent of how the caller
/// chunked its windows, and accurate for long inputs.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Metrics over `[windows, R, F]` (or `[R, F]`, or a flat `[F]`) tensors in
/// raw units. `wall_clock_seconds` is left at zero for the caller to fill.
pub fn compute_metrics(pred: &Tensor, target: &Tensor, mask: MapeMask) -> Result<MetricsReport> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!("predictions {:?} vs targets {:?}", pred.shape(), target.shape())));
    }
    if pred.is_empty() || pred.shape().len() > 3 {
        return Err(Error::Data(format!("cannot score predictions of shape {:?}", pred.shape())));
    }
    let mut dims = vec![1; 3 - pred.shape().len()];
    dims.extend_from_slice(pred.shape());
    let (windows, regions, horizon) = (dims[0], dims[1], dims[2]);

    let err: Vec<f64> = pred.data().iter().zip(target.data()).map(|(p, y)| p - y).collect();
    let abs: Vec<f64> = err.iter().map(|e| e.abs()).collect();
    let sq: Vec<f64> = err.iter().map(|e| e * e).collect();
    let n = err.len() as f64;

    let ape: Vec<f64> = abs
        .iter()
        .zip(target.data())
        .filter(|(_, y)| match mask {
            MapeMask::Floor(floor) => y.abs() > floor,
            MapeMask::Unmasked => **y != 0.0,
        })
        .map(|(a, y)| a / y.abs())
        .collect();
    let mape = (!ape.is_empty()).then(|| 100.0 * pairwise_sum(&ape) / ape.len() as f64);

    let per_horizon_mae = (0..horizon)
        .map(|f| {
            let col: Vec<f64> = abs.iter().skip(f).step_by(horizon).copied().collect();
            pairwise_sum(&col) / col.len() as f64
        })
        .collect();

    Ok(MetricsReport {
        mae: pairwise_sum(&abs) / n,
        rmse: (pairwise_sum(&sq) / n).sqrt(),
        mape,
        per_horizon_mae,
        wall_clock_seconds: 0.0,
        num_windows: windows,
        num_regions: regions,
    })
}
