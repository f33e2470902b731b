use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Eigendecomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// `[n, n]`; column `j` pairs with `values[j]`.
    pub vectors: Tensor,
    /// Frobenius norm of the off-diagonal part at termination.
    pub off_diagonal: f64,
    pub sweeps: usize,
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi rotations until the off-diagonal norm is at most `tol`.
pub fn symmetric_eigen(a: &Tensor, tol: f64) -> Result<SymmetricEigen> {
    if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(Error::Shape(format!("eigendecomposition of non-square {:?}", a.shape())));
    }
    let n = a.shape()[0];
    let mut m = a.data().to_vec();
    let mut v = Tensor::identity(n).into_data();

    let off_norm = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    let mut off = off_norm(&m);
    while off > tol {
        if sweeps == MAX_SWEEPS {
            return Err(Error::Evaluation(format!(
                "Jacobi did not converge after {MAX_SWEEPS} sweeps (off-diagonal norm {off:e})"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        off = off_norm(&m);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = Tensor::from_fn(&[n, n], |idx| v[(idx / n) * n + order[idx % n]]);
    Ok(SymmetricEigen {
        values,
        vectors,
        off_diagonal: off,
        sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn two_by_two_closed_form() {
        let a = Tensor::matrix(&[&[1.0, -1.0], &[-1.0, 1.0]]);
        let e = symmetric_eigen(&a, 1e-12).unwrap();
        assert!(e.values[0].abs() < 1e-15);
        assert!((e.values[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn matches_nalgebra_on_random_symmetric() {
        let mut rng = Rng::seed_from(3);
        for n in [1, 2, 5, 17, 40] {
            let mut a = Tensor::zeros(&[n, n]);
            for i in 0..n {
                for j in i..n {
                    let x = rng.uniform_in(-1.0, 1.0);
                    a.set(&[i, j], x);
                    a.set(&[j, i], x);
                }
            }
            let ours = symmetric_eigen(&a, 1e-10).unwrap();
            assert!(ours.off_diagonal <= 1e-10);
            let dm = nalgebra::DMatrix::from_row_slice(n, n, a.data());
            let mut theirs: Vec<f64> = dm.symmetric_eigen().eigenvalues.iter().copied().collect();
            theirs.sort_by(f64::total_cmp);
            for (x, y) in ours.values.iter().zip(&theirs) {
                assert!((x - y).abs() < 1e-9, "n={n}: {x} vs {y}");
            }
            // A v = λ v column by column.
            let av = a.matmul(&ours.vectors).unwrap();
            for j in 0..n {
                for i in 0..n {
                    let r = av.get(&[i, j]) - ours.values[j] * ours.vectors.get(&[i, j]);
                    assert!(r.abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn rejects_non_square() {
        assert!(symmetric_eigen(&Tensor::zeros(&[2, 3]), 1e-10).is_err());
    }
}
