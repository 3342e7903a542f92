use crate::error::{Error, Result};

/// Central-difference step used across the crate's gradient checks.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Gradient magnitudes below this are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    /// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)` per parameter.
    pub rel_errors: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares `analytic` with central differences of `loss_fn` around `params`.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], analytic: &[f64], step: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::DimensionMismatch {
            context: "grad_check",
            expected: params.len(),
            actual: analytic.len(),
        });
    }
    let first = loss_fn(params);
    let second = loss_fn(params);
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    let mut p = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut rel_errors = Vec::with_capacity(params.len());
    let mut max_rel_error = 0.0f64;
    let mut max_abs_error = 0.0f64;
    let mut worst_index = 0;
    for i in 0..params.len() {
        let orig = p[i];
        p[i] = orig + step;
        let plus = loss_fn(&p);
        p[i] = orig - step;
        let minus = loss_fn(&p);
        p[i] = orig;
        let n = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(REL_FLOOR);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = i;
        }
        max_abs_error = max_abs_error.max(abs);
        numeric.push(n);
        rel_errors.push(rel);
    }
    Ok(GradCheckReport {
        max_rel_error,
        max_abs_error,
        worst_index,
        rel_errors,
        numeric,
    })
}
