use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Keeps the nonzero entries of a dense `[rows, cols]` tensor.
    pub fn from_dense(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::Shape(format!("sparse matrix from {:?}", t.shape())));
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut m = Self {
            rows,
            cols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        };
        for row in t.data().chunks(cols.max(1)).take(rows) {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    m.indices.push(j);
                    m.values.push(v);
                }
            }
            m.indptr.push(m.indices.len());
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `self · x` with `x` viewed as `[cols, width]`.
    pub(crate) fn mul_dense(&self, x: &[f64], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * width];
        for i in 0..self.rows {
            let o = &mut out[i * width..(i + 1) * width];
            for k in self.indptr[i]..self.indptr[i + 1] {
                let (j, a) = (self.indices[k], self.values[k]);
                for (o, v) in o.iter_mut().zip(&x[j * width..(j + 1) * width]) {
                    *o += a * v;
                }
            }
        }
        out
    }

    /// `selfᵀ · g` with `g` viewed as `[rows, width]`.
    pub(crate) fn transpose_mul_dense(&self, g: &[f64], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols * width];
        for i in 0..self.rows {
            let gi = &g[i * width..(i + 1) * width];
            for k in self.indptr[i]..self.indptr[i + 1] {
                let (j, a) = (self.indices[k], self.values[k]);
                for (o, v) in out[j * width..(j + 1) * width].iter_mut().zip(gi) {
                    *o += a * v;
                }
            }
        }
        out
    }
}
