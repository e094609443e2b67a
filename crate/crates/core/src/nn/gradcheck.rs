//! Finite-difference verification of analytic gradients.

use crate::scalar::Scalar;

/// Denominator floor: entries smaller than this are compared absolutely,
/// since central differences carry ~1e-10 absolute noise at eps = 1e-5.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR)
}

/// `(f(θ+ε·eᵢ) − f(θ−ε·eᵢ)) / 2ε` for every coordinate.
pub fn central_difference<F>(mut f: F, params: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut theta = params.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = theta[i];
            theta[i] = orig + eps;
            let plus = f(&theta);
            theta[i] = orig - eps;
            let minus = f(&theta);
            theta[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

pub fn max_relative_error<S: Scalar>(analytic: &[S], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, &n)| relative_error(a.as_f64(), n))
        .fold(0.0, f64::max)
}

/// Compare `analytic` against central differences of `model_fn` at `params`.
pub fn grad_check<F>(model_fn: F, params: &[f64], analytic: &[f64], eps: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = central_difference(model_fn, params, eps);
    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    GradCheckReport {
        max_rel_error,
        worst_index,
        analytic: analytic.to_vec(),
        numeric,
    }
}
