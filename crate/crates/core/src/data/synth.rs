use std::f64::consts::PI;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};

use super::calendar::step_time;
use super::dataset::{validate_sample_rate, NetworkKind, TrafficDataset};
use crate::error::{Error, Result};
use crate::graph::{build_adjacency, normalize_adjacency, Geometry, TrafficGraph};
use crate::numerics::{Rng, Tensor};

/// Parameters of a synthetic city.
///
/// Each region follows `scale · base_volume · (1 + amp · w(dow) · s(tod) + e_t)`
/// where `s` is a zero-mean two-harmonic daily profile, `w` damps the weekend
/// swing and `e_t` is seasonal (lag one day) autoregressive noise whose
/// innovations are diffused over the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub name: String,
    pub regions: usize,
    pub days: usize,
    pub sample_rate_minutes: u32,
    pub network_kind: NetworkKind,
    pub base_volume: f64,
    /// Log-scale spread of the per-region volume multiplier.
    pub region_scale_spread: f64,
    /// Innovation standard deviation, relative to the region's mean volume.
    pub noise_level: f64,
    pub seed: u64,
    #[serde(default = "default_weekend_factor")]
    pub weekend_factor: f64,
    /// Correlation of the noise with its value one day earlier.
    #[serde(default = "default_seasonal_correlation")]
    pub seasonal_correlation: f64,
    /// Shift of the daily profile, in hours (positive = later peaks).
    #[serde(default)]
    pub peak_shift_hours: f64,
    #[serde(default = "default_start")]
    pub start_timestamp: String,
}

fn default_weekend_factor() -> f64 {
    0.6
}

fn default_seasonal_correlation() -> f64 {
    0.5
}

fn default_start() -> String {
    // A Monday.
    "2024-01-01T00:00:00Z".into()
}

impl SyntheticSpec {
    pub fn new(name: &str, regions: usize, days: usize, network_kind: NetworkKind, seed: u64) -> Self {
        Self {
            name: name.into(),
            regions,
            days,
            sample_rate_minutes: 5,
            network_kind,
            base_volume: 100.0,
            region_scale_spread: 0.5,
            noise_level: 0.1,
            seed,
            weekend_factor: default_weekend_factor(),
            seasonal_correlation: default_seasonal_correlation(),
            peak_shift_hours: 0.0,
            start_timestamp: default_start(),
        }
    }

    fn validate(&self) -> Result<DateTime<Utc>> {
        let bad = |msg: String| Err(Error::Param(msg));
        if self.regions < 2 {
            return bad(format!("a synthetic city needs at least 2 regions, got {}", self.regions));
        }
        if self.days < 2 {
            return bad(format!("a synthetic city needs at least 2 days, got {}", self.days));
        }
        validate_sample_rate(self.sample_rate_minutes).map_err(|e| Error::Param(e.to_string()))?;
        if !(self.base_volume > 0.0) || !self.base_volume.is_finite() {
            return bad(format!("base volume {} must be positive", self.base_volume));
        }
        if !(self.region_scale_spread >= 0.0) || !(self.noise_level >= 0.0) {
            return bad("scale spread and noise level must be non-negative".into());
        }
        if !(0.0..=2.0).contains(&self.weekend_factor) {
            return bad(format!("weekend factor {} outside [0, 2]", self.weekend_factor));
        }
        if !(0.0..1.0).contains(&self.seasonal_correlation) {
            return bad(format!("seasonal correlation {} outside [0, 1)", self.seasonal_correlation));
        }
        super::dataset::parse_timestamp(&self.start_timestamp).map_err(|e| Error::Param(e.to_string()))
    }
}

/// Generated dataset plus the latent per-region parameters.
#[derive(Clone, Debug)]
pub struct SyntheticCity {
    pub dataset: TrafficDataset,
    pub region_scales: Vec<f64>,
    pub geometry: Geometry,
}

pub fn generate_synthetic_city(spec: &SyntheticSpec) -> Result<TrafficDataset> {
    synthesize(spec).map(|c| c.dataset)
}

pub fn synthesize(spec: &SyntheticSpec) -> Result<SyntheticCity> {
    let start = spec.validate()?;
    let r = spec.regions;
    let per_day = (24 * 60 / spec.sample_rate_minutes) as usize;
    let t = spec.days * per_day;
    let mut rng = Rng::seed_from(spec.seed);

    let geometry = match spec.network_kind {
        NetworkKind::Grid => {
            let rows = (1..=((r as f64).sqrt() as usize)).rev().find(|d| r % d == 0).unwrap_or(1);
            Geometry::Grid { rows, cols: r / rows }
        }
        NetworkKind::Sensor => {
            // Unit density: the expected neighbour count does not depend on R.
            let side = (r as f64).sqrt();
            Geometry::Sensor((0..r).map(|_| (rng.uniform_in(0.0, side), rng.uniform_in(0.0, side))).collect())
        }
    };
    let graph = match build_adjacency(&geometry, 1.0, 0.1) {
        Ok(g) => g,
        // Sparse random layouts can miss every pair; fall back to a chain in x order.
        Err(Error::EmptyGraph) => chain_graph(&geometry)?,
        Err(e) => return Err(e),
    };

    let scales: Vec<f64> = (0..r).map(|_| (spec.region_scale_spread * rng.normal()).exp()).collect();
    let amps: Vec<f64> = (0..r).map(|_| rng.uniform_in(0.35, 0.6)).collect();
    let phases: Vec<f64> = (0..r)
        .map(|_| (spec.peak_shift_hours + rng.uniform_in(-1.0, 1.0)) / 24.0)
        .collect();
    let second: Vec<f64> = (0..r).map(|_| rng.uniform_in(0.2, 0.5)).collect();

    let rho = spec.seasonal_correlation;
    let stationary = 1.0 / (1.0 - rho * rho).sqrt();
    let diffusion = RowDiffusion::new(&graph);
    let mut noise = vec![0.0; r * t];
    let mut z = vec![0.0; r];
    for step in 0..t {
        z.iter_mut().for_each(|v| *v = rng.normal());
        let innov = diffusion.apply(&z);
        for i in 0..r {
            let e = spec.noise_level * innov[i];
            noise[i * t + step] = if step >= per_day {
                rho * noise[i * t + step - per_day] + e
            } else {
                e * stationary
            };
        }
    }

    let mut values = vec![0.0; r * t];
    for step in 0..t {
        let when = step_time(start, spec.sample_rate_minutes, step);
        let w = match when.weekday().num_days_from_monday() {
            5 | 6 => spec.weekend_factor,
            _ => 1.0,
        };
        let x = (step % per_day) as f64 / per_day as f64;
        for i in 0..r {
            let u = 2.0 * PI * (x - phases[i]);
            let profile = -(u.cos() + second[i] * (2.0 * u).cos()) / (1.0 + second[i]);
            let level = 1.0 + amps[i] * w * profile + noise[i * t + step];
            values[i * t + step] = (scales[i] * spec.base_volume * level).max(0.0);
        }
    }

    let dataset = TrafficDataset {
        name: spec.name.clone(),
        values: Tensor::new(&[r, t], values)?,
        sample_rate_minutes: spec.sample_rate_minutes,
        start,
        network_kind: spec.network_kind,
        grid_dims: match geometry {
            Geometry::Grid { rows, cols } => Some((rows, cols)),
            Geometry::Sensor(_) => None,
        },
        adjacency: graph.adjacency,
    };
    dataset.validate()?;
    Ok(SyntheticCity {
        dataset,
        region_scales: scales,
        geometry,
    })
}

fn chain_graph(geometry: &Geometry) -> Result<TrafficGraph> {
    let Geometry::Sensor(coords) = geometry else {
        return Err(Error::EmptyGraph);
    };
    let r = coords.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| coords[a].0.total_cmp(&coords[b].0));
    let mut a = Tensor::zeros(&[r, r]);
    for w in order.windows(2) {
        a.set(&[w[0], w[1]], 0.1);
        a.set(&[w[1], w[0]], 0.1);
    }
    TrafficGraph::new(a, NetworkKind::Sensor)
}

/// Unit-variance mix of each node's own shock and its neighbours' weighted mean.
struct RowDiffusion {
    weights: Tensor,
    norm: Vec<f64>,
}

impl RowDiffusion {
    fn new(g: &TrafficGraph) -> Self {
        let r = g.regions();
        let a = normalize_adjacency(g);
        let mut weights = Tensor::zeros(&[r, r]);
        let mut norm = Vec::with_capacity(r);
        for i in 0..r {
            let row = &a.data()[i * r..(i + 1) * r];
            let total: f64 = row.iter().sum();
            let mut sq = 0.0;
            if total > 0.0 {
                for j in 0..r {
                    let w = row[j] / total;
                    weights.set(&[i, j], w);
                    sq += w * w;
                }
            }
            norm.push(1.0 / (1.0 + sq).sqrt());
        }
        Self { weights, norm }
    }

    fn apply(&self, z: &[f64]) -> Vec<f64> {
        let r = z.len();
        (0..r)
            .map(|i| {
                let row = &self.weights.data()[i * r..(i + 1) * r];
                let m: f64 = row.iter().zip(z).map(|(w, v)| w * v).sum();
                (z[i] + m) * self.norm[i]
            })
            .collect()
    }
}
