use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Floor on the per-region standard deviation.
pub const EPS_SIGMA: f64 = 1e-5;

/// Per-region mean and (floored) population standard deviation of a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl NormStats {
    pub fn regions(&self) -> usize {
        self.mu.len()
    }
}

/// Standardizes every row of `hist` (`[R, H]`) by its own mean and std.
pub fn instance_normalize(hist: &Tensor) -> Result<(Tensor, NormStats)> {
    if hist.rank() != 2 || hist.shape()[1] == 0 {
        return Err(Error::Shape(format!("instance_normalize expects [R, H], got {:?}", hist.shape())));
    }
    let h = hist.shape()[1];
    let mut out = Vec::with_capacity(hist.len());
    let mut stats = NormStats {
        mu: Vec::new(),
        sigma: Vec::new(),
    };
    for row in hist.data().chunks(h) {
        let mu = row.iter().sum::<f64>() / h as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / h as f64;
        let sigma = var.sqrt().max(EPS_SIGMA);
        out.extend(row.iter().map(|v| (v - mu) / sigma));
        stats.mu.push(mu);
        stats.sigma.push(sigma);
    }
    Ok((Tensor::new(hist.shape(), out)?, stats))
}

/// Maps normalized predictions (`[R, F]`) back to raw units.
pub fn denormalize(pred: &Tensor, stats: &NormStats) -> Result<Tensor> {
    if pred.rank() != 2 || pred.shape()[0] != stats.regions() {
        return Err(Error::Shape(format!(
            "predictions {:?} against statistics for {} regions",
            pred.shape(),
            stats.regions()
        )));
    }
    let f = pred.shape()[1];
    let mut out = Vec::with_capacity(pred.len());
    for (r, row) in pred.data().chunks(f.max(1)).enumerate() {
        out.extend(row.iter().map(|v| v * stats.sigma[r] + stats.mu[r]));
    }
    Tensor::new(pred.shape(), out)
}

/// Applies the forward transform of `stats` to raw values (`[R, F]`).
pub fn normalize_with(raw: &Tensor, stats: &NormStats) -> Result<Tensor> {
    if raw.rank() != 2 || raw.shape()[0] != stats.regions() {
        return Err(Error::Shape(format!(
            "values {:?} against statistics for {} regions",
            raw.shape(),
            stats.regions()
        )));
    }
    let f = raw.shape()[1];
    let mut out = Vec::with_capacity(raw.len());
    for (r, row) in raw.data().chunks(f.max(1)).enumerate() {
        out.extend(row.iter().map(|v| (v - stats.mu[r]) / stats.sigma[r]));
    }
    Tensor::new(raw.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_series_normalizes_to_zero() {
        let (n, s) = instance_normalize(&Tensor::matrix(&[&[5.0; 4]])).unwrap();
        assert!(n.data().iter().all(|&v| v == 0.0));
        assert_eq!(s.mu, vec![5.0]);
        assert_eq!(s.sigma, vec![EPS_SIGMA]);
    }

    #[test]
    fn direct_formula() {
        let (n, s) = instance_normalize(&Tensor::matrix(&[&[1.0, 2.0, 3.0, 4.0]])).unwrap();
        assert_eq!(s.mu[0], 2.5);
        assert!((s.sigma[0] - 1.25f64.sqrt()).abs() < 1e-15);
        let expect = [-1.34164, -0.44721, 0.44721, 1.34164];
        for (a, b) in n.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn denormalize_examples() {
        let stats = NormStats {
            mu: vec![5.0],
            sigma: vec![2.0],
        };
        let out = denormalize(&Tensor::zeros(&[1, 3]), &stats).unwrap();
        assert_eq!(out.data(), &[5.0; 3]);

        let stats = NormStats {
            mu: vec![2.5],
            sigma: vec![1.11803],
        };
        let out = denormalize(&Tensor::matrix(&[&[1.0]]), &stats).unwrap();
        assert!((out.data()[0] - 3.61803).abs() < 1e-12);

        assert!(matches!(
            denormalize(&Tensor::zeros(&[2, 3]), &stats),
            Err(Error::Shape(_))
        ));
    }

    proptest! {
        #[test]
        fn round_trip(rows in 1usize..5, cols in 2usize..40, seed in any::<u64>()) {
            let mut rng = crate::numerics::Rng::seed_from(seed);
            let x = Tensor::from_fn(&[rows, cols], |_| rng.uniform_in(-50.0, 50.0));
            let (n, s) = instance_normalize(&x).unwrap();
            prop_assume!(s.sigma.iter().all(|&v| v >= 10.0 * EPS_SIGMA));
            let back = denormalize(&n, &s).unwrap();
            for (a, b) in back.data().iter().zip(x.data()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
