use crate::error::{Error, Result};

/// Maximum relative error between an analytic gradient and central
/// differences.
///
/// `f` returns the function value and its analytic gradient at the given
/// point; only the value is used at perturbed points. The error per
/// coordinate is `|g_analytic - g_fd| / (|g_fd| + 1e-12)`.
pub fn finite_diff_check<F>(mut f: F, params: &[f64], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::domain(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let (value, analytic) = f(params)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("f evaluated to {value}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::dim(format!(
            "analytic gradient has {} entries for {} params",
            analytic.len(),
            params.len()
        )));
    }
    let mut point = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        point[i] = params[i] + epsilon;
        let (up, _) = f(&point)?;
        point[i] = params[i] - epsilon;
        let (down, _) = f(&point)?;
        point[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("f not finite around coordinate {i}")));
        }
        let fd = (up - down) / (2.0 * epsilon);
        let rel = (analytic[i] - fd).abs() / (fd.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
