//! The forecasting network: patch embedding, calendar and spatial context,
//! periodic cross-attention, stacked dynamic-attention/GCN/SwiGLU layers and a
//! flatten-and-project head.

mod blocks;
mod params;

pub use blocks::{
    attention, dynamic_self_attention, embed_patches, encode, encode_spatial_context, encode_temporal_context, forward,
    gcn_propagate, head, periodic_cross_attention, positional_encoding, predict, swiglu_block, Attention,
    AttentionWeights, GraphContext, RMS_EPS,
};
pub use params::{count_parameters, init_params, Bound, ModelParams, ParameterCount};

use serde::{Deserialize, Serialize};

use crate::data::{TrafficDataset, WindowGeometry};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Mini,
    Base,
    Plus,
    Custom,
}

impl Preset {
    /// `(d, heads, layers)`.
    pub fn dims(self) -> Option<(usize, usize, usize)> {
        match self {
            Preset::Mini => Some((160, 4, 2)),
            Preset::Base => Some((288, 8, 4)),
            Preset::Plus => Some((512, 8, 10)),
            Preset::Custom => None,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mini" => Ok(Preset::Mini),
            "base" => Ok(Preset::Base),
            "plus" => Ok(Preset::Plus),
            "custom" => Ok(Preset::Custom),
            _ => Err(Error::Config(format!("unknown preset '{s}'"))),
        }
    }
}

/// Which blocks run. A disabled block is replaced by the identity; disabling
/// context encoding zeroes the calendar and spatial encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub periodic_attention: bool,
    pub dynamic_attention: bool,
    pub spatial_gcn: bool,
    pub context_encoding: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Self {
            periodic_attention: true,
            dynamic_attention: true,
            spatial_gcn: true,
            context_encoding: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: Preset,
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub geometry: WindowGeometry,
    /// Sampling interval the geometry (in steps) was chosen for.
    #[serde(default = "default_sample_rate")]
    pub sample_rate_minutes: u32,
    /// Width of the Laplacian region embedding.
    pub k: usize,
    /// Weight of the identity path in graph propagation.
    pub alpha: f64,
    pub dropout_attn: f64,
    pub dropout_st: f64,
    #[serde(default)]
    pub ablations: Ablations,
}

fn default_sample_rate() -> u32 {
    5
}

impl ModelConfig {
    /// Preset dimensions with one-day history and horizon at `sample_rate_minutes`.
    pub fn preset(preset: Preset, sample_rate_minutes: u32) -> Result<Self> {
        let (d, heads, layers) = preset
            .dims()
            .ok_or_else(|| Error::Config("the custom preset has no default dimensions".into()))?;
        if sample_rate_minutes == 0 || 1440 % sample_rate_minutes != 0 {
            return Err(Error::Config(format!("sample rate {sample_rate_minutes} min does not divide a day")));
        }
        let geometry = WindowGeometry::one_day((1440 / sample_rate_minutes) as usize);
        let mut cfg = Self::custom(d, heads, layers, geometry);
        cfg.preset = preset;
        cfg.sample_rate_minutes = sample_rate_minutes;
        Ok(cfg)
    }

    pub fn custom(d: usize, heads: usize, layers: usize, geometry: WindowGeometry) -> Self {
        Self {
            preset: Preset::Custom,
            d,
            heads,
            layers,
            geometry,
            sample_rate_minutes: default_sample_rate(),
            k: crate::graph::DEFAULT_EMBEDDING_DIM,
            alpha: 0.05,
            dropout_attn: 0.3,
            dropout_st: 0.1,
            ablations: Ablations::default(),
        }
    }

    /// Geometry and sampling must match the dataset the model is applied to.
    pub fn check_dataset(&self, ds: &TrafficDataset) -> Result<()> {
        if ds.sample_rate_minutes != self.sample_rate_minutes {
            return Err(Error::Config(format!(
                "dataset '{}' is sampled every {} min but the model's {}-step history and horizon assume {} min",
                ds.name, ds.sample_rate_minutes, self.geometry.history, self.sample_rate_minutes
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads.max(1)
    }

    pub fn hist_tokens(&self) -> usize {
        self.geometry.hist_tokens().unwrap_or(0)
    }

    pub fn fut_tokens(&self) -> usize {
        self.geometry.fut_tokens().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.d % 2 != 0 {
            return bad(format!("hidden width d={} must be positive and even", self.d));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("d={} is not divisible by {} heads", self.d, self.heads));
        }
        if self.k == 0 {
            return bad("region embedding width must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        for (name, r) in [("attention dropout", self.dropout_attn), ("dropout", self.dropout_st)] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("{name} rate {r} outside [0, 1)"));
            }
        }
        self.geometry.validate().map_err(|e| Error::Config(format!("window geometry: {e}")))?;
        if !self.ablations.periodic_attention && self.hist_tokens() != self.fut_tokens() {
            return bad(format!(
                "disabling periodic attention needs equal history and future token counts ({} vs {})",
                self.hist_tokens(),
                self.fut_tokens()
            ));
        }
        Ok(())
    }
}
