//! Central finite-difference checks of tape gradients in f64.
//!
//! Coordinates whose ± perturbation moves any ReLU / leaky-ReLU input across
//! zero are skipped: the function is not differentiable there and the
//! difference quotient is meaningless.

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub step: f64,
    pub atol: f64,
    pub rtol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { step: 1e-4, atol: 1e-6, rtol: 1e-3 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    /// `(parameter, index, analytic, numeric)` for each violation.
    pub failures: Vec<(String, usize, f64, f64)>,
    /// Largest `|a − n| / (atol + rtol·|n|)` seen; ≤ 1 means within tolerance.
    pub worst_ratio: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
        self.failures.extend(other.failures);
        self.worst_ratio = self.worst_ratio.max(other.worst_ratio);
    }
}

fn eval<F>(f: &F, store: &ParamStore<f64>) -> Result<(f64, Vec<bool>)>
where
    F: for<'p> Fn(&mut Tape<'p, f64>, &'p ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::with_kink_tracking();
    let v = f(&mut tape, store)?;
    let value = tape.scalar(v);
    let kinks = tape.kink_signature().map(<[bool]>::to_vec).unwrap_or_default();
    Ok((value, kinks))
}

/// Checks d f / d θ for every trainable scalar of `store`. `select` may
/// restrict which parameters are visited.
pub fn check_params<F>(store: &ParamStore<f64>, f: F, tol: Tolerance, select: &dyn Fn(&str) -> bool) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&mut Tape<'p, f64>, &'p ParamStore<f64>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::with_kink_tracking();
        let v = f(&mut tape, store)?;
        tape.backward(v)?.params
    };
    let (_, base_kinks) = eval(&f, store)?;
    let mut report = GradCheckReport::default();
    let mut work = store.clone();
    for (idx, p) in store.iter().enumerate() {
        if !p.trainable || !select(&p.name) {
            continue;
        }
        let id = ParamId(idx);
        let grad = analytic.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.tensor.len()]);
        for k in 0..p.tensor.len() {
            let orig = p.tensor.data()[k];
            work.get_mut(id).tensor.data_mut()[k] = orig + tol.step;
            let (plus, kp) = eval(&f, &work)?;
            work.get_mut(id).tensor.data_mut()[k] = orig - tol.step;
            let (minus, km) = eval(&f, &work)?;
            work.get_mut(id).tensor.data_mut()[k] = orig;
            if kp != base_kinks || km != base_kinks {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * tol.step);
            let a = grad[k];
            let bound = tol.atol + tol.rtol * numeric.abs();
            let ratio = (a - numeric).abs() / bound;
            report.worst_ratio = report.worst_ratio.max(ratio);
            report.checked += 1;
            if ratio > 1.0 {
                report.failures.push((p.name.clone(), k, a, numeric));
            }
        }
    }
    Ok(report)
}
