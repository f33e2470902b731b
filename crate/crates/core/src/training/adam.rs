use std::collections::BTreeMap;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// First and second moment estimates per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

/// Global L2 norm over every gradient.
pub fn global_norm(grads: &BTreeMap<String, Vec<f64>>) -> f64 {
    grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// One bias-corrected Adam update of the parameters named in `grads`.
/// With `grad_clip`, gradients are first rescaled to that global norm.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    tc: &TrainConfig,
) -> Result<()> {
    for (name, g) in grads {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient for '{name}'")));
        }
        if params.get(name)?.len() != g.len() {
            return Err(Error::Shape(format!("gradient for '{name}' has {} entries", g.len())));
        }
    }
    let scale = match tc.grad_clip {
        Some(max) => {
            let norm = global_norm(grads);
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let (b1, b2) = tc.betas;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (name, g) in grads {
        let p = params.get_mut(name)?.data_mut();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for i in 0..g.len() {
            let gi = g[i] * scale;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            p[i] -= tc.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + tc.adam_eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn single(value: f64) -> ModelParams {
        ModelParams::from_map([("w".to_string(), Tensor::new(&[1], vec![value]).unwrap())].into())
    }

    fn grads(g: f64) -> BTreeMap<String, Vec<f64>> {
        [("w".to_string(), vec![g])].into()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = single(0.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &grads(1.0), &mut s, &TrainConfig::default()).unwrap();
        assert!((p.get("w").unwrap().data()[0] + 0.001).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = single(0.25);
        let mut s = AdamState::default();
        for _ in 0..5 {
            adam_step(&mut p, &grads(0.0), &mut s, &TrainConfig::default()).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data()[0], 0.25);
    }

    #[test]
    fn clipping_bounds_the_applied_gradient() {
        let tc = TrainConfig {
            grad_clip: Some(0.5),
            lr: 0.1,
            ..Default::default()
        };
        let mut p = single(0.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &grads(40.0), &mut s, &tc).unwrap();
        // The first moment saw the clipped gradient, not the raw one.
        assert!((s.m["w"][0] - 0.1 * 0.5).abs() < 1e-12);
        assert!((s.v["w"][0] - 0.001 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut p = single(0.0);
        let err = adam_step(&mut p, &grads(f64::NAN), &mut AdamState::default(), &TrainConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::Training(m) if m.contains("'w'")));
        assert_eq!(p.get("w").unwrap().data()[0], 0.0);
    }

    #[test]
    fn ten_steps_are_reproducible() {
        let run = || {
            let mut p = single(1.0);
            let mut s = AdamState::default();
            for i in 0..10 {
                adam_step(&mut p, &grads((i as f64).sin()), &mut s, &TrainConfig::default()).unwrap();
            }
            p
        };
        assert_eq!(run().get("w").unwrap().data()[0].to_bits(), run().get("w").unwrap().data()[0].to_bits());
    }
}
