//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Var`] is a reference-counted node holding its forward value. Nodes
//! that (transitively) depend on a trainable leaf keep their parents and the
//! data their vector-Jacobian product needs; everything else is a constant
//! and is freed as soon as the caller drops it, so inference never retains
//! a graph.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use super::kernels::{gemm, sigmoid, softmax_rows_in_place};
use super::rng::Rng;
use super::sparse::SparseMatrix;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone)]
pub struct Var(Rc<Node>);

struct Node {
    value: Tensor,
    op: Op,
    parents: Vec<Var>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
}

enum Op {
    Leaf,
    MatMul,
    Bmm { trans_b: bool },
    Add,
    Mul,
    Scale(f64),
    Softmax,
    Mask(Vec<f64>),
    Swish,
    RmsNorm { eps: f64 },
    Reshape,
    Permute(Vec<usize>),
    ConcatLast,
    GatherRows(Vec<usize>),
    SparseLeft(Rc<SparseMatrix>),
    Mae(Vec<f64>),
    Sum,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

impl Var {
    /// Constant input; never receives a gradient.
    pub fn constant(value: Tensor) -> Var {
        Var::leaf(value, false)
    }

    /// Trainable leaf; its gradient is available after [`Var::backward`].
    pub fn parameter(value: &Tensor) -> Var {
        let plain = Tensor::new(value.shape(), value.data().to_vec()).expect("shape already valid");
        Var::leaf(plain, true)
    }

    fn leaf(value: Tensor, requires_grad: bool) -> Var {
        let value = if value.requires_grad() {
            let shape = value.shape().to_vec();
            Tensor::new(&shape, value.into_data()).expect("shape already valid")
        } else {
            value
        };
        Var(Rc::new(Node {
            value,
            op: Op::Leaf,
            parents: Vec::new(),
            requires_grad,
            grad: RefCell::new(None),
        }))
    }

    fn from_op(value: Tensor, op: Op, parents: Vec<Var>) -> Var {
        let requires_grad = parents.iter().any(Var::requires_grad);
        let (op, parents) = if requires_grad {
            (op, parents)
        } else {
            (Op::Leaf, Vec::new())
        };
        Var(Rc::new(Node {
            value,
            op,
            parents,
            requires_grad,
            grad: RefCell::new(None),
        }))
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.0.value.data()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data().len(), 1, "item() on non-scalar {:?}", self.shape());
        self.data()[0]
    }

    /// Gradient accumulated into a trainable leaf by [`Var::backward`].
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn ptr_eq(&self, other: &Var) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    // ---- linear algebra ----

    /// `[.., k] · [k, n] → [.., n]`; leading dimensions of `self` are flattened.
    pub fn matmul(&self, w: &Var) -> Result<Var> {
        let (xs, ws) = (self.shape(), w.shape());
        if xs.is_empty() || ws.len() != 2 || xs[xs.len() - 1] != ws[0] {
            return Err(shape_err("matmul", xs, ws));
        }
        let k = ws[0];
        let n = ws[1];
        let m = self.data().len() / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), false, w.data(), false, &mut out, false);
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = n;
        let value = Tensor::new(&shape, out)?;
        Ok(Var::from_op(value, Op::MatMul, vec![self.clone(), w.clone()]))
    }

    /// Batched product `[B, m, k] · [B, k, n]`, or `· [B, n, k]ᵀ` with `trans_b`.
    pub fn bmm(&self, other: &Var, trans_b: bool) -> Result<Var> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 3 || b.len() != 3 || a[0] != b[0] {
            return Err(shape_err("bmm", a, b));
        }
        let (batch, m, k) = (a[0], a[1], a[2]);
        let (kb, n) = if trans_b { (b[2], b[1]) } else { (b[1], b[2]) };
        if kb != k {
            return Err(shape_err("bmm", a, b));
        }
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &self.data()[i * m * k..(i + 1) * m * k],
                false,
                &other.data()[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let value = Tensor::new(&[batch, m, n], out)?;
        Ok(Var::from_op(
            value,
            Op::Bmm { trans_b },
            vec![self.clone(), other.clone()],
        ))
    }

    // ---- elementwise ----

    /// Broadcasting sum (numpy rules, trailing dimensions aligned).
    pub fn add(&self, other: &Var) -> Result<Var> {
        let value = broadcast_binary(self.value(), other.value(), |a, b| a + b)?;
        Ok(Var::from_op(value, Op::Add, vec![self.clone(), other.clone()]))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.add(&other.scale(-1.0))
    }

    /// Broadcasting elementwise product.
    pub fn mul(&self, other: &Var) -> Result<Var> {
        let value = broadcast_binary(self.value(), other.value(), |a, b| a * b)?;
        Ok(Var::from_op(value, Op::Mul, vec![self.clone(), other.clone()]))
    }

    pub fn scale(&self, c: f64) -> Var {
        let data = self.data().iter().map(|v| v * c).collect();
        let value = Tensor::new(self.shape(), data).expect("same shape");
        Var::from_op(value, Op::Scale(c), vec![self.clone()])
    }

    /// Softmax over the last dimension, stabilized by the row max.
    pub fn softmax_rows(&self) -> Var {
        let n = *self.shape().last().unwrap_or(&1);
        let mut data = self.data().to_vec();
        softmax_rows_in_place(&mut data, n);
        let value = Tensor::new(self.shape(), data).expect("same shape");
        Var::from_op(value, Op::Softmax, vec![self.clone()])
    }

    /// `z · sigmoid(z)`.
    pub fn swish(&self) -> Var {
        let data = self.data().iter().map(|&z| z * sigmoid(z)).collect();
        let value = Tensor::new(self.shape(), data).expect("same shape");
        Var::from_op(value, Op::Swish, vec![self.clone()])
    }

    /// Inverted dropout. Eval mode and `rate == 0` return `self` unchanged.
    pub fn dropout(&self, rate: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Param(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.data().len())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        let data = self.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(self.shape(), data)?;
        Ok(Var::from_op(value, Op::Mask(mask), vec![self.clone()]))
    }

    /// `gain ⊙ x / sqrt(mean(x²) + eps)` over the last dimension.
    pub fn rms_norm(&self, gain: &Var, eps: f64) -> Result<Var> {
        let d = *self.shape().last().unwrap_or(&0);
        if gain.shape() != [d] {
            return Err(shape_err("rms_norm gain", self.shape(), gain.shape()));
        }
        let g = gain.data();
        let mut out = vec![0.0; self.data().len()];
        for (row, o) in self.data().chunks(d).zip(out.chunks_mut(d)) {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            for ((o, x), g) in o.iter_mut().zip(row).zip(g) {
                *o = g * x * inv;
            }
        }
        let value = Tensor::new(self.shape(), out)?;
        Ok(Var::from_op(
            value,
            Op::RmsNorm { eps },
            vec![self.clone(), gain.clone()],
        ))
    }

    // ---- layout ----

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let value = self.value().clone().reshaped(shape)?;
        Ok(Var::from_op(value, Op::Reshape, vec![self.clone()]))
    }

    /// Axis permutation; output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape(format!("invalid permutation {perm:?} for {shape:?}")));
        }
        let data = permute_data(self.data(), shape, perm);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let value = Tensor::new(&out_shape, data)?;
        Ok(Var::from_op(value, Op::Permute(perm.to_vec()), vec![self.clone()]))
    }

    /// Concatenation along the last axis; leading dimensions must agree.
    pub fn concat_last(parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let lead = &first.shape()[..first.shape().len().saturating_sub(1)];
        for p in parts {
            let s = p.shape();
            if s.is_empty() || &s[..s.len() - 1] != lead {
                return Err(shape_err("concat_last", first.shape(), s));
            }
        }
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| *p.shape().last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let value = Tensor::new(&shape, out)?;
        Ok(Var::from_op(value, Op::ConcatLast, parts.to_vec()))
    }

    /// Row lookup into a `[n, w]` table.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::Shape(format!("gather_rows on {s:?}")));
        }
        let (n, w) = (s[0], s[1]);
        let mut out = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            if i >= n {
                return Err(Error::Index(format!("row {i} of a {n}-row table")));
            }
            out.extend_from_slice(&self.data()[i * w..(i + 1) * w]);
        }
        let value = Tensor::new(&[idx.len(), w], out)?;
        Ok(Var::from_op(value, Op::GatherRows(idx.to_vec()), vec![self.clone()]))
    }

    /// `A · self` for a constant sparse `A`, with `self` viewed as
    /// `[A.cols, rest]`; the output keeps the trailing dimensions.
    pub fn sparse_left_mul(&self, a: &Rc<SparseMatrix>) -> Result<Var> {
        let s = self.shape();
        if s.is_empty() || s[0] != a.cols() {
            return Err(shape_err("sparse_left_mul", &[a.rows(), a.cols()], s));
        }
        let width = self.data().len() / s[0].max(1);
        let mut shape = s.to_vec();
        shape[0] = a.rows();
        let value = Tensor::new(&shape, a.mul_dense(self.data(), width))?;
        Ok(Var::from_op(value, Op::SparseLeft(a.clone()), vec![self.clone()]))
    }

    // ---- reductions ----

    pub fn sum(&self) -> Var {
        let value = Tensor::scalar(self.data().iter().sum());
        Var::from_op(value, Op::Sum, vec![self.clone()])
    }

    pub fn mean(&self) -> Var {
        let n = self.data().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Mean absolute error against a constant target; subgradient 0 at ties.
    pub fn mae(&self, target: &Tensor) -> Result<Var> {
        if self.shape() != target.shape() {
            return Err(shape_err("mae", self.shape(), target.shape()));
        }
        let n = self.data().len().max(1) as f64;
        let mut total = 0.0;
        let mut sign = Vec::with_capacity(self.data().len());
        for (p, t) in self.data().iter().zip(target.data()) {
            let e = p - t;
            total += e.abs();
            sign.push(if e > 0.0 {
                1.0 / n
            } else if e < 0.0 {
                -1.0 / n
            } else {
                0.0
            });
        }
        let value = Tensor::scalar(total / n);
        Ok(Var::from_op(value, Op::Mae(sign), vec![self.clone()]))
    }

    // ---- reverse pass ----

    /// Accumulates `d self / d leaf` into every trainable leaf reachable from
    /// `self`, which must be a scalar. Gradients add to earlier calls' values.
    pub fn backward(&self) -> Result<()> {
        if self.data().len() != 1 {
            return Err(Error::Shape(format!(
                "backward from non-scalar {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut grads: HashMap<*const Node, Vec<f64>> = HashMap::new();
        grads.insert(Rc::as_ptr(&self.0), vec![1.0]);
        for var in order.iter().rev() {
            let key = Rc::as_ptr(&var.0);
            let Some(g) = grads.remove(&key) else { continue };
            if matches!(var.0.op, Op::Leaf) {
                let mut slot = var.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                    None => *slot = Some(g),
                }
                continue;
            }
            let parent_grads = var.vjp(&g);
            for (parent, pg) in var.0.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                match grads.entry(Rc::as_ptr(&parent.0)) {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        e.get_mut().iter_mut().zip(&pg).for_each(|(a, v)| *a += v)
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(pg);
                    }
                }
            }
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Var> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(Var, bool)> = vec![(self.clone(), false)];
        while let Some((var, expanded)) = stack.pop() {
            if expanded {
                order.push(var);
                continue;
            }
            if !visited.insert(Rc::as_ptr(&var.0)) {
                continue;
            }
            stack.push((var.clone(), true));
            for p in &var.0.parents {
                if p.requires_grad() && !visited.contains(&Rc::as_ptr(&p.0)) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    fn vjp(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let node = &self.0;
        let ps = &node.parents;
        let need = |i: usize| ps[i].requires_grad();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul => {
                let (x, w) = (&ps[0], &ps[1]);
                let k = w.shape()[0];
                let n = w.shape()[1];
                let m = x.data().len() / k.max(1);
                let dx = need(0).then(|| {
                    let mut d = vec![0.0; m * k];
                    gemm(m, n, k, g, false, w.data(), true, &mut d, false);
                    d
                });
                let dw = need(1).then(|| {
                    let mut d = vec![0.0; k * n];
                    gemm(k, m, n, x.data(), true, g, false, &mut d, false);
                    d
                });
                vec![dx, dw]
            }
            Op::Bmm { trans_b } => {
                let (a, b) = (&ps[0], &ps[1]);
                let (batch, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
                let n = if *trans_b { b.shape()[1] } else { b.shape()[2] };
                let da = need(0).then(|| {
                    let mut d = vec![0.0; batch * m * k];
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &b.data()[i * k * n..(i + 1) * k * n];
                        // dA = G · op(B)ᵀ
                        gemm(m, n, k, gi, false, bi, !trans_b, &mut d[i * m * k..(i + 1) * m * k], false);
                    }
                    d
                });
                let db = need(1).then(|| {
                    let mut d = vec![0.0; batch * k * n];
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &a.data()[i * m * k..(i + 1) * m * k];
                        let di = &mut d[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            // B is n×k: dB = Gᵀ · A
                            gemm(n, m, k, gi, true, ai, false, di, false);
                        } else {
                            gemm(k, m, n, ai, true, gi, false, di, false);
                        }
                    }
                    d
                });
                vec![da, db]
            }
            Op::Add => {
                let out = node.value.shape();
                (0..2)
                    .map(|i| need(i).then(|| reduce_broadcast(g, out, ps[i].shape())))
                    .collect()
            }
            Op::Mul => {
                let out = node.value.shape();
                let (a, b) = (ps[0].value(), ps[1].value());
                let da = need(0).then(|| {
                    let gb = broadcast_binary_raw(g, out, b.data(), b.shape(), |x, y| x * y);
                    reduce_broadcast(&gb, out, a.shape())
                });
                let db = need(1).then(|| {
                    let ga = broadcast_binary_raw(g, out, a.data(), a.shape(), |x, y| x * y);
                    reduce_broadcast(&ga, out, b.shape())
                });
                vec![da, db]
            }
            Op::Scale(c) => vec![Some(g.iter().map(|v| v * c).collect())],
            Op::Softmax => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap_or(&1);
                let mut d = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(d.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![Some(d)]
            }
            Op::Mask(mask) => vec![Some(g.iter().zip(mask).map(|(a, m)| a * m).collect())],
            Op::Swish => {
                let z = ps[0].data();
                vec![Some(
                    z.iter()
                        .zip(g)
                        .map(|(&z, gv)| {
                            let s = sigmoid(z);
                            gv * (s + z * s * (1.0 - s))
                        })
                        .collect(),
                )]
            }
            Op::RmsNorm { eps } => {
                let x = ps[0].data();
                let gain = ps[1].data();
                let d = gain.len();
                let mut dx = vec![0.0; x.len()];
                let mut dgain = vec![0.0; d];
                for ((xr, gr), dr) in x.chunks(d).zip(g.chunks(d)).zip(dx.chunks_mut(d)) {
                    let ms = xr.iter().map(|v| v * v).sum::<f64>() / d as f64;
                    let inv = 1.0 / (ms + eps).sqrt();
                    let mut dot = 0.0;
                    for j in 0..d {
                        dgain[j] += gr[j] * xr[j] * inv;
                        dot += gr[j] * gain[j] * xr[j];
                    }
                    let coef = dot * inv * inv * inv / d as f64;
                    for j in 0..d {
                        dr[j] = gr[j] * gain[j] * inv - xr[j] * coef;
                    }
                }
                vec![need(0).then_some(dx), need(1).then_some(dgain)]
            }
            Op::Reshape => vec![Some(g.to_vec())],
            Op::Permute(perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                vec![Some(permute_data(g, node.value.shape(), &inv))]
            }
            Op::ConcatLast => {
                let widths: Vec<usize> = ps.iter().map(|p| *p.shape().last().unwrap()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total.max(1);
                let mut outs: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for (o, &w) in outs.iter_mut().zip(&widths) {
                        o.extend_from_slice(&g[off..off + w]);
                        off += w;
                    }
                }
                outs.into_iter()
                    .enumerate()
                    .map(|(i, o)| need(i).then_some(o))
                    .collect()
            }
            Op::GatherRows(idx) => {
                let w = ps[0].shape()[1];
                let mut d = vec![0.0; ps[0].data().len()];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..w {
                        d[i * w + j] += g[r * w + j];
                    }
                }
                vec![Some(d)]
            }
            Op::SparseLeft(a) => {
                let width = g.len() / a.rows().max(1);
                vec![Some(a.transpose_mul_dense(g, width))]
            }
            Op::Mae(sign) => vec![Some(sign.iter().map(|s| s * g[0]).collect())],
            Op::Sum => vec![Some(vec![g[0]; ps[0].data().len()])],
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(shape_err("broadcast", a, b)),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out` (zero along broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + rank - shape.len();
        strides[oi] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

fn for_each_broadcast(out: &[usize], strides: &[&[usize]], mut f: impl FnMut(usize, &[usize])) {
    let total: usize = out.iter().product();
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let mut offs = vec![0usize; strides.len()];
    for flat in 0..total {
        f(flat, &offs);
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            for (o, s) in offs.iter_mut().zip(strides) {
                *o += s[axis];
            }
            if idx[axis] < out[axis] {
                break;
            }
            for (o, s) in offs.iter_mut().zip(strides) {
                *o -= s[axis] * out[axis];
            }
            idx[axis] = 0;
        }
    }
}

fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        return Tensor::new(a.shape(), data);
    }
    let out = broadcast_shape(a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![0.0; out.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out, &[&sa, &sb], |flat, offs| {
        data[flat] = f(ad[offs[0]], bd[offs[1]]);
    });
    Tensor::new(&out, data)
}

/// `g` has the full output shape; `b` broadcasts into it.
fn broadcast_binary_raw(g: &[f64], out: &[usize], b: &[f64], b_shape: &[usize], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if out == b_shape {
        return g.iter().zip(b).map(|(x, y)| f(*x, *y)).collect();
    }
    let sb = broadcast_strides(b_shape, out);
    let mut data = vec![0.0; g.len()];
    for_each_broadcast(out, &[&sb], |flat, offs| {
        data[flat] = f(g[flat], b[offs[0]]);
    });
    data
}

/// Sums `g` (shaped `out`) down to `target`, the shape of a broadcast operand.
fn reduce_broadcast(g: &[f64], out: &[usize], target: &[usize]) -> Vec<f64> {
    if out == target {
        return g.to_vec();
    }
    let st = broadcast_strides(target, out);
    let mut d = vec![0.0; target.iter().product()];
    for_each_broadcast(out, &[&st], |flat, offs| {
        d[offs[0]] += g[flat];
    });
    d
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = vec![0.0; data.len()];
    for_each_broadcast(&out_shape, &[&strides], |flat, offs| {
        out[flat] = data[offs[0]];
    });
    out
}
