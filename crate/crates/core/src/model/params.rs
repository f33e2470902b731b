use std::collections::BTreeMap;

use serde::Serialize;

use super::ModelConfig;
use crate::data::{DOW_CLASSES, TOD_BUCKETS};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor, Var};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

/// Parameters wrapped as autodiff variables for one forward pass.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl ModelParams {
    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Param(format!("no parameter named '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Param(format!("no parameter named '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Trainable variables for the names `trainable` accepts, constants for the rest.
    pub fn bind(&self, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable(name) {
                    Var::parameter(t)
                } else {
                    Var::constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    pub fn bind_constants(&self) -> Bound {
        self.bind(|_| false)
    }

    pub fn bind_all(&self) -> Bound {
        self.bind(|_| true)
    }
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::Param(format!("no parameter named '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Replaces or adds one variable.
    pub fn insert(&mut self, name: &str, v: Var) {
        self.vars.insert(name.to_string(), v);
    }

    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        Self { vars }
    }
}

/// `(name, shape, fan_in)` for every tensor; gains have fan-in 0.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, usize)> {
    let d = cfg.d;
    let p = cfg.geometry.patch_len;
    let mut out = vec![
        ("patch.w".to_string(), vec![p, d], p),
        ("patch.b".to_string(), vec![d], p),
        ("context.tod".to_string(), vec![TOD_BUCKETS, d / 2], 1),
        ("context.dow".to_string(), vec![DOW_CLASSES, d / 2], 1),
        ("context.spatial".to_string(), vec![cfg.k, d], cfg.k),
    ];
    let attn = |prefix: &str, out: &mut Vec<(String, Vec<usize>, usize)>| {
        for w in ["wq", "wk", "wv", "wo"] {
            out.push((format!("{prefix}.{w}"), vec![d, d], d));
        }
        out.push((format!("{prefix}.norm"), vec![d], 0));
    };
    attn("periodic", &mut out);
    for l in 0..cfg.layers {
        attn(&format!("layer{l}.attn"), &mut out);
        out.push((format!("layer{l}.gcn.w"), vec![d, d], d));
        for w in ["wa", "wb", "wc"] {
            out.push((format!("layer{l}.ffn.{w}"), vec![d, d], d));
        }
        out.push((format!("layer{l}.ffn.norm"), vec![d], 0));
    }
    let flat = cfg.fut_tokens() * d;
    out.push(("head.w".to_string(), vec![flat, cfg.geometry.horizon], flat));
    out.push(("head.b".to_string(), vec![cfg.geometry.horizon], flat));
    out
}

/// Uniform `±1/√fan_in` weights and unit RMSNorm gains, deterministic in `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = Rng::seed_from(seed);
    let mut tensors = BTreeMap::new();
    for (name, shape, fan_in) in layout(cfg) {
        let t = if fan_in == 0 {
            Tensor::filled(&shape, 1.0)
        } else {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(&shape, |_| rng.uniform_in(-bound, bound))
        };
        tensors.insert(name, t);
    }
    Ok(ModelParams { tensors })
}

/// Per-component scalar counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParameterCount {
    pub patch_embedding: usize,
    pub temporal_context: usize,
    pub spatial_context: usize,
    pub periodic_attention: usize,
    pub per_layer: usize,
    pub layers: usize,
    pub head: usize,
    pub total: usize,
}

/// Closed-form count, independent of the tensor layout used by [`init_params`].
pub fn count_parameters(cfg: &ModelConfig) -> ParameterCount {
    let d = cfg.d;
    let linear = |i: usize, o: usize, bias: bool| i * o + if bias { o } else { 0 };
    let attention = 4 * linear(d, d, false) + d;
    let patch_embedding = linear(cfg.geometry.patch_len, d, true);
    let temporal_context = (TOD_BUCKETS + DOW_CLASSES) * (d / 2);
    let spatial_context = linear(cfg.k, d, false);
    let per_layer = attention + linear(d, d, false) + 3 * linear(d, d, false) + d;
    let head = linear(cfg.fut_tokens() * d, cfg.geometry.horizon, true);
    let total = patch_embedding + temporal_context + spatial_context + attention + cfg.layers * per_layer + head;
    ParameterCount {
        patch_embedding,
        temporal_context,
        spatial_context,
        periodic_attention: attention,
        per_layer,
        layers: cfg.layers,
        head,
        total,
    }
}
