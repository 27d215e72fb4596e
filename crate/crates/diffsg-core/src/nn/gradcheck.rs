//! Central-difference gradient verification.

use crate::error::{Error, Result};

/// Compares `analytic` gradients against central finite differences of
/// `loss` and returns the maximum relative error
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)` over all
/// parameters.
///
/// `params` is restored to its original contents before returning.
/// `epsilon` must lie in `[1e-7, 1e-3]`.
pub fn finite_diff_check<F>(
    mut loss: F,
    params: &mut Vec<f64>,
    analytic: &[f64],
    epsilon: f64,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::invalid_argument(format!(
            "finite-diff epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    if params.len() != analytic.len() {
        return Err(Error::invalid_argument(format!(
            "finite-diff: {} params but {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut max_err = 0.0f64;
    for i in 0..params.len() {
        let original = params[i];
        params[i] = original + epsilon;
        let hi = loss(params);
        params[i] = original - epsilon;
        let lo = loss(params);
        params[i] = original;
        let numeric = (hi - lo) / (2.0 * epsilon);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs() + 1e-12);
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}
