use std::rc::Rc;

use super::params::{Bound, ModelParams};
use super::ModelConfig;
use crate::data::{PatchedWindow, TrafficDataset};
use crate::error::{Error, Result, StageExt};
use crate::graph::{normalize_adjacency, region_embeddings, TrafficGraph};
use crate::numerics::{Rng, SparseMatrix, Tensor, Var};

pub const RMS_EPS: f64 = 1e-8;

/// Per-dataset spatial inputs: Laplacian embeddings and the normalized adjacency.
#[derive(Clone, Debug)]
pub struct GraphContext {
    /// `[R, k]`.
    pub phi: Tensor,
    pub adjacency: Rc<SparseMatrix>,
}

impl GraphContext {
    pub fn new(graph: &TrafficGraph, k: usize) -> Result<Self> {
        Ok(Self {
            phi: region_embeddings(graph, k)?.phi,
            adjacency: Rc::new(SparseMatrix::from_dense(&normalize_adjacency(graph))?),
        })
    }

    pub fn from_dataset(ds: &TrafficDataset, k: usize) -> Result<Self> {
        Self::new(&TrafficGraph::from_dataset(ds)?, k)
    }

    pub fn regions(&self) -> usize {
        self.phi.shape()[0]
    }
}

/// Sinusoidal table: `PE[pos, 2i] = sin(pos / 10000^{2i/d})`, `PE[pos, 2i+1] = cos(·)`.
pub fn positional_encoding(tokens: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[tokens, d], |k| {
        let (pos, j) = (k / d, k % d);
        let angle = pos as f64 / 10000f64.powf((j - j % 2) as f64 / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// `[R, N, P]` patches → `[R, N, d]` tokens.
pub fn embed_patches(patches: &Var, p: &Bound, cfg: &ModelConfig) -> Result<Var> {
    let s = patches.shape();
    if s.len() != 3 || s[2] != cfg.geometry.patch_len {
        return Err(Error::Shape(format!(
            "patches {s:?} do not match patch length {}",
            cfg.geometry.patch_len
        )));
    }
    let pe = Var::constant(positional_encoding(s[1], cfg.d));
    patches.matmul(p.get("patch.w")?)?.add(p.get("patch.b")?)?.add(&pe)
}

/// `[tokens, d]`: time-of-day half followed by day-of-week half.
pub fn encode_temporal_context(tod: &[usize], dow: &[usize], p: &Bound) -> Result<Var> {
    if tod.len() != dow.len() {
        return Err(Error::Shape(format!("{} tod vs {} dow indices", tod.len(), dow.len())));
    }
    Var::concat_last(&[p.get("context.tod")?.gather_rows(tod)?, p.get("context.dow")?.gather_rows(dow)?])
}

/// `C = Φ · W_s`, `[R, d]`.
pub fn encode_spatial_context(phi: &Tensor, p: &Bound) -> Result<Var> {
    Var::constant(phi.clone()).matmul(p.get("context.spatial")?)
}

/// Projections and output gain of one attention block.
pub struct AttentionWeights<'a> {
    pub wq: &'a Var,
    pub wk: &'a Var,
    pub wv: &'a Var,
    pub wo: &'a Var,
    pub norm: &'a Var,
}

impl<'a> AttentionWeights<'a> {
    pub fn from_bound(p: &'a Bound, prefix: &str) -> Result<Self> {
        Ok(Self {
            wq: p.get(&format!("{prefix}.wq"))?,
            wk: p.get(&format!("{prefix}.wk"))?,
            wv: p.get(&format!("{prefix}.wv"))?,
            wo: p.get(&format!("{prefix}.wo"))?,
            norm: p.get(&format!("{prefix}.norm"))?,
        })
    }
}

pub struct Attention {
    /// RMS-normalized block output, `[R, N_q, d]`.
    pub output: Var,
    /// Output projection before normalization.
    pub pre_norm: Var,
    /// `[R·heads, N_q, N_k]`.
    pub weights: Var,
}

fn split_heads(x: &Var, heads: usize) -> Result<Var> {
    let s = x.shape().to_vec();
    let dh = s[2] / heads;
    x.reshape(&[s[0], s[1], heads, dh])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[s[0] * heads, s[1], dh])
}

fn merge_heads(x: &Var, regions: usize, heads: usize) -> Result<Var> {
    let s = x.shape().to_vec();
    x.reshape(&[regions, heads, s[1], s[2]])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[regions, s[1], heads * s[2]])
}

/// Multi-head attention over `[R, N, d]` inputs. Dropout hits the raw logits,
/// which are then scaled by `1/√d_h` and soft-maxed over keys.
#[allow(clippy::too_many_arguments)]
pub fn attention(
    q_src: &Var,
    k_src: &Var,
    v_src: &Var,
    w: &AttentionWeights,
    heads: usize,
    dropout: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Attention> {
    let (qs, ks, vs) = (q_src.shape(), k_src.shape(), v_src.shape());
    if qs.len() != 3 || ks.len() != 3 || ks != vs || qs[0] != ks[0] || qs[2] != ks[2] {
        return Err(Error::Shape(format!("attention inputs {qs:?}, {ks:?}, {vs:?}")));
    }
    let d = qs[2];
    if heads == 0 || d % heads != 0 {
        return Err(Error::Shape(format!("width {d} does not split into {heads} heads")));
    }
    let regions = qs[0];
    let q = split_heads(&q_src.matmul(w.wq)?, heads)?;
    let k = split_heads(&k_src.matmul(w.wk)?, heads)?;
    let v = split_heads(&v_src.matmul(w.wv)?, heads)?;
    let logits = q.bmm(&k, true)?.dropout(dropout, training, rng)?;
    let weights = logits.scale(1.0 / ((d / heads) as f64).sqrt()).softmax_rows();
    let mixed = merge_heads(&weights.bmm(&v, false)?, regions, heads)?;
    let pre_norm = mixed.matmul(w.wo)?;
    let output = pre_norm.rms_norm(w.norm, RMS_EPS)?;
    Ok(Attention {
        output,
        pre_norm,
        weights,
    })
}

fn broadcast_regions(x: &Var, regions: usize) -> Result<Var> {
    let s = x.shape();
    x.add(&Var::constant(Tensor::zeros(&[regions, s[0], s[1]])))
}

/// Future calendar plus spatial context queries the history calendar plus
/// spatial context; values are the embedded history tokens.
#[allow(clippy::too_many_arguments)]
pub fn periodic_cross_attention(
    e: &Var,
    d_his: Option<&Var>,
    d_pre: Option<&Var>,
    c: Option<&Var>,
    p: &Bound,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut Rng,
) -> Result<Attention> {
    let (r, d) = (e.shape()[0], cfg.d);
    let context = |t: Option<&Var>, n: usize| -> Result<Var> {
        let base = match t {
            Some(t) => broadcast_regions(t, r)?,
            None => Var::constant(Tensor::zeros(&[r, n, d])),
        };
        match c {
            Some(c) => base.add(&c.reshape(&[r, 1, d])?),
            None => Ok(base),
        }
    };
    let q_src = context(d_pre, cfg.fut_tokens())?;
    let k_src = context(d_his, e.shape()[1])?;
    let w = AttentionWeights::from_bound(p, "periodic")?;
    attention(&q_src, &k_src, e, &w, cfg.heads, cfg.dropout_attn, training, rng)
}

/// Self-attention of layer `layer` over `[R, N_f, d]`.
pub fn dynamic_self_attention(
    m: &Var,
    layer: usize,
    p: &Bound,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut Rng,
) -> Result<Attention> {
    let w = AttentionWeights::from_bound(p, &format!("layer{layer}.attn"))?;
    attention(m, m, m, &w, cfg.heads, cfg.dropout_attn, training, rng)
}

/// `dropout(α·H + (1−α)·Ā·H·W_g)`, mixing regions independently per token.
pub fn gcn_propagate(
    h: &Var,
    adjacency: &Rc<SparseMatrix>,
    layer: usize,
    p: &Bound,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut Rng,
) -> Result<Var> {
    let mixed = h.sparse_left_mul(adjacency)?.matmul(p.get(&format!("layer{layer}.gcn.w"))?)?;
    h.scale(cfg.alpha)
        .add(&mixed.scale(1.0 - cfg.alpha))?
        .dropout(cfg.dropout_st, training, rng)
}

/// `SwiGLU(RMSNorm(G + O_prev)) + G`.
pub fn swiglu_block(g: &Var, o_prev: &Var, layer: usize, p: &Bound) -> Result<Var> {
    if g.shape() != o_prev.shape() {
        return Err(Error::Shape(format!("swiglu inputs {:?} vs {:?}", g.shape(), o_prev.shape())));
    }
    let name = |w: &str| format!("layer{layer}.ffn.{w}");
    let x = g.add(o_prev)?.rms_norm(p.get(&name("norm"))?, RMS_EPS)?;
    let gate = x.matmul(p.get(&name("wa"))?)?.swish();
    let lin = x.matmul(p.get(&name("wb"))?)?;
    gate.mul(&lin)?.matmul(p.get(&name("wc"))?)?.add(g)
}

fn check_window(w: &PatchedWindow, ctx: &GraphContext, cfg: &ModelConfig) -> Result<()> {
    let s = w.hist_patches.shape();
    let want = [ctx.regions(), cfg.hist_tokens(), cfg.geometry.patch_len];
    if s != want {
        return Err(Error::Shape(format!("window patches {s:?}, model expects {want:?}")));
    }
    if w.tod_fut.len() != cfg.fut_tokens() || ctx.phi.shape()[1] != cfg.k {
        return Err(Error::Shape(format!(
            "{} future tokens and embedding width {}, model expects {} and {}",
            w.tod_fut.len(),
            ctx.phi.shape()[1],
            cfg.fut_tokens(),
            cfg.k
        )));
    }
    Ok(())
}

/// Everything up to the head: `[R, N_f·d]` features.
pub fn encode(
    w: &PatchedWindow,
    ctx: &GraphContext,
    p: &Bound,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut Rng,
) -> Result<Var> {
    check_window(w, ctx, cfg)?;
    let r = ctx.regions();
    let e = embed_patches(&Var::constant(w.hist_patches.clone()), p, cfg).stage("patch embedding")?;
    let (d_his, d_pre, c) = if cfg.ablations.context_encoding {
        (
            Some(encode_temporal_context(&w.tod_hist, &w.dow_hist, p).stage("temporal context")?),
            Some(encode_temporal_context(&w.tod_fut, &w.dow_fut, p).stage("temporal context")?),
            Some(encode_spatial_context(&ctx.phi, p).stage("spatial context")?),
        )
    } else {
        (None, None, None)
    };
    let mut o = if cfg.ablations.periodic_attention {
        periodic_cross_attention(&e, d_his.as_ref(), d_pre.as_ref(), c.as_ref(), p, cfg, training, rng)
            .stage("periodic attention")?
            .output
    } else {
        let mut m = e;
        if let Some(t) = &d_his {
            m = m.add(t)?;
        }
        if let Some(c) = &c {
            m = m.add(&c.reshape(&[r, 1, cfg.d])?)?;
        }
        m
    };
    for l in 0..cfg.layers {
        let h = if cfg.ablations.dynamic_attention {
            dynamic_self_attention(&o, l, p, cfg, training, rng).stage("dynamic attention")?.output
        } else {
            o.clone()
        };
        let g = if cfg.ablations.spatial_gcn {
            gcn_propagate(&h, &ctx.adjacency, l, p, cfg, training, rng).stage("graph propagation")?
        } else {
            h
        };
        o = swiglu_block(&g, &o, l, p).stage("swiglu")?;
    }
    o.reshape(&[r, cfg.fut_tokens() * cfg.d])
}

/// Flattened features → `[R, F]`.
pub fn head(features: &Var, p: &Bound) -> Result<Var> {
    features.matmul(p.get("head.w")?)?.add(p.get("head.b")?)
}

/// Normalized `[R, F]` predictions for one window.
pub fn forward(
    w: &PatchedWindow,
    ctx: &GraphContext,
    p: &Bound,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut Rng,
) -> Result<Var> {
    head(&encode(w, ctx, p, cfg, training, rng)?, p).stage("head")
}

/// Eval-mode forward with constant parameters.
pub fn predict(w: &PatchedWindow, ctx: &GraphContext, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    let mut rng = Rng::seed_from(0);
    let out = forward(w, ctx, &params.bind_constants(), cfg, false, &mut rng)?;
    Ok(out.value().clone())
}
