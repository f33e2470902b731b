//! Spatial networks, normalized adjacency and Laplacian eigenvector embeddings.

mod jacobi;

pub use jacobi::{symmetric_eigen, SymmetricEigen};

use serde::{Deserialize, Serialize};

use crate::data::{NetworkKind, TrafficDataset};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Eigenvalues below this are the trivial (zero) modes of the Laplacian.
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-8;
/// Jacobi stopping threshold on the off-diagonal Frobenius norm.
pub const JACOBI_TOL: f64 = 1e-10;
pub const DEFAULT_EMBEDDING_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrafficGraph {
    /// `[R, R]`, symmetric, non-negative, zero diagonal.
    pub adjacency: Tensor,
    pub kind: NetworkKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Geometry {
    /// Planar sensor coordinates.
    Sensor(Vec<(f64, f64)>),
    Grid { rows: usize, cols: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionEmbeddings {
    /// `[R, k]`, orthonormal columns.
    pub phi: Tensor,
    /// Ascending eigenvalues paired with the columns of `phi`.
    pub eigenvalues: Vec<f64>,
}

impl TrafficGraph {
    pub fn new(adjacency: Tensor, kind: NetworkKind) -> Result<Self> {
        if adjacency.rank() != 2 || adjacency.shape()[0] != adjacency.shape()[1] {
            return Err(Error::Shape(format!("adjacency must be square, got {:?}", adjacency.shape())));
        }
        crate::data::check_adjacency(&adjacency)?;
        Ok(Self { adjacency, kind })
    }

    pub fn from_dataset(ds: &TrafficDataset) -> Result<Self> {
        Self::new(ds.adjacency.clone(), ds.network_kind)
    }

    pub fn regions(&self) -> usize {
        self.adjacency.shape()[0]
    }

    pub fn degrees(&self) -> Vec<f64> {
        let r = self.regions();
        self.adjacency.data().chunks(r.max(1)).map(|row| row.iter().sum()).collect()
    }

    pub fn edge_count(&self) -> usize {
        let r = self.regions();
        let d = self.adjacency.data();
        (0..r).map(|i| (i + 1..r).filter(|&j| d[i * r + j] != 0.0).count()).sum()
    }
}

/// Sensor networks use a thresholded Gaussian kernel on planar distance
/// (`exp(−d²/σ²)`, kept when `≥ threshold`); grids use unit 4-neighbour links.
pub fn build_adjacency(geometry: &Geometry, kernel_sigma: f64, threshold: f64) -> Result<TrafficGraph> {
    match geometry {
        Geometry::Sensor(coords) => {
            let r = coords.len();
            if r < 2 {
                return Err(Error::Param(format!("sensor network needs at least 2 sensors, got {r}")));
            }
            if !(kernel_sigma > 0.0) {
                return Err(Error::Param(format!("kernel sigma {kernel_sigma} must be positive")));
            }
            let mut a = Tensor::zeros(&[r, r]);
            for i in 0..r {
                for j in i + 1..r {
                    let (dx, dy) = (coords[i].0 - coords[j].0, coords[i].1 - coords[j].1);
                    let w = (-(dx * dx + dy * dy) / (kernel_sigma * kernel_sigma)).exp();
                    if w >= threshold {
                        a.set(&[i, j], w);
                        a.set(&[j, i], w);
                    }
                }
            }
            let g = TrafficGraph {
                adjacency: a,
                kind: NetworkKind::Sensor,
            };
            if g.edge_count() == 0 {
                return Err(Error::EmptyGraph);
            }
            Ok(g)
        }
        &Geometry::Grid { rows, cols } => {
            let r = rows * cols;
            if r < 2 {
                return Err(Error::Param(format!("grid {rows}×{cols} needs at least 2 cells")));
            }
            let mut a = Tensor::zeros(&[r, r]);
            for y in 0..rows {
                for x in 0..cols {
                    let i = y * cols + x;
                    if x + 1 < cols {
                        a.set(&[i, i + 1], 1.0);
                        a.set(&[i + 1, i], 1.0);
                    }
                    if y + 1 < rows {
                        a.set(&[i, i + cols], 1.0);
                        a.set(&[i + cols, i], 1.0);
                    }
                }
            }
            Ok(TrafficGraph {
                adjacency: a,
                kind: NetworkKind::Grid,
            })
        }
    }
}

fn inv_sqrt_degrees(g: &TrafficGraph) -> Vec<f64> {
    g.degrees()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect()
}

/// `D^{-1/2} A D^{-1/2}`; isolated nodes keep zero rows and columns.
pub fn normalize_adjacency(g: &TrafficGraph) -> Tensor {
    let r = g.regions();
    let s = inv_sqrt_degrees(g);
    let a = g.adjacency.data();
    Tensor::from_fn(&[r, r], |k| {
        let (i, j) = (k / r, k % r);
        s[i] * a[k] * s[j]
    })
}

/// `I − D^{-1/2} A D^{-1/2}`.
pub fn normalized_laplacian(g: &TrafficGraph) -> Tensor {
    let r = g.regions();
    let mut l = normalize_adjacency(g);
    for (k, v) in l.data_mut().iter_mut().enumerate() {
        *v = if k / r == k % r { 1.0 - *v } else { -*v };
    }
    l
}

/// The `k` eigenvectors of the normalized Laplacian that follow its zero
/// modes, each signed so its largest-magnitude entry is positive.
pub fn region_embeddings(g: &TrafficGraph, k: usize) -> Result<RegionEmbeddings> {
    let eig = symmetric_eigen(&normalized_laplacian(g), JACOBI_TOL)?;
    let r = g.regions();
    let first = eig.values.iter().take_while(|&&v| v < ZERO_EIGENVALUE_TOL).count();
    let available = r - first;
    if k > available {
        return Err(Error::Rank {
            requested: k,
            available,
        });
    }
    let cols: Vec<usize> = (first..first + k).collect();
    let mut phi = Tensor::zeros(&[r, k]);
    for (c, &src) in cols.iter().enumerate() {
        let column: Vec<f64> = (0..r).map(|i| eig.vectors.get(&[i, src])).collect();
        let max = column.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let pivot = column.iter().position(|v| v.abs() >= max - 1e-10).unwrap_or(0);
        let sign = if column[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (i, v) in column.iter().enumerate() {
            phi.set(&[i, c], sign * v);
        }
    }
    Ok(RegionEmbeddings {
        phi,
        eigenvalues: cols.iter().map(|&c| eig.values[c]).collect(),
    })
}

#[cfg(test)]
mod tests;
