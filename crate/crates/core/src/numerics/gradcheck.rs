use super::rng::Rng;
use super::tensor::Tensor;
use super::var::Var;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Coordinates sampled per parameter tensor; `None` checks all of them.
    pub samples_per_param: Option<usize>,
    /// Denominator floor so vanishing gradients compare absolutely.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            samples_per_param: None,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(param index, flat coordinate, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
    pub passed: bool,
}

/// Compares reverse-mode gradients of the scalar `f` with central differences
/// `(f(x+h) − f(x−h)) / 2h` at sampled coordinates of `params`.
pub fn grad_check<F>(f: F, params: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    if opts.step <= 0.0 {
        return Err(Error::Param(format!("finite-difference step {} must be positive", opts.step)));
    }
    let vars: Vec<Var> = params.iter().map(Var::parameter).collect();
    let out = f(&vars)?;
    if !out.item().is_finite() {
        return Err(Error::Evaluation(format!("f is not finite at the base point: {}", out.item())));
    }
    out.backward()?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| v.grad().unwrap_or_else(|| vec![0.0; v.data().len()]))
        .collect();
    drop(out);
    drop(vars);

    let eval = |values: &[Tensor]| -> Result<f64> {
        let consts: Vec<Var> = values.iter().map(|t| Var::constant(t.clone())).collect();
        let y = f(&consts)?.item();
        if !y.is_finite() {
            return Err(Error::Evaluation(format!("f is not finite at a perturbed point: {y}")));
        }
        Ok(y)
    };

    let mut rng = Rng::seed_from(opts.seed);
    let mut working: Vec<Tensor> = params.iter().map(|t| Tensor::new(t.shape(), t.data().to_vec())).collect::<Result<_>>()?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        passed: true,
    };
    for p in 0..params.len() {
        let n = params[p].len();
        if n == 0 {
            continue;
        }
        let coords: Vec<usize> = match opts.samples_per_param {
            Some(s) if s < n => (0..s).map(|_| rng.below(n)).collect(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let x0 = params[p].data()[c];
            working[p].data_mut()[c] = x0 + opts.step;
            let fp = eval(&working)?;
            working[p].data_mut()[c] = x0 - opts.step;
            let fm = eval(&working)?;
            working[p].data_mut()[c] = x0;
            let numeric = (fp - fm) / (2.0 * opts.step);
            let a = analytic[p][c];
            let denom = a.abs().max(numeric.abs()).max(opts.abs_floor);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((p, c, a, numeric));
            }
        }
    }
    report.passed = report.max_rel_error <= opts.tolerance;
    Ok(report)
}
