//! Central finite-difference checks for tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(1, |numeric|)` seen.
    pub max_rel_error: f64,
    /// `(input, element)` where the largest error occurred.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Relative error used throughout the gradient checks.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Evaluates `f` on constant copies of `inputs` and returns the scalar output.
pub fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Analytic gradients of `f` with respect to every input.
pub fn analytic_gradients<F>(inputs: &[Tensor], f: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    Ok(vars.iter().map(|&v| tape.grad(v).expect("param has grad")).collect())
}

/// Compares analytic gradients against central differences with `step`.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(inputs, &f)?;
    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (ti, grad) in analytic.iter().enumerate() {
        for k in 0..work[ti].len() {
            let orig = work[ti].data()[k];
            work[ti].data_mut()[k] = orig + step;
            let up = evaluate(&work, &f)?;
            work[ti].data_mut()[k] = orig - step;
            let down = evaluate(&work, &f)?;
            work[ti].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(grad.data()[k], numeric);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((ti, k));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
