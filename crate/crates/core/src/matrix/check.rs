use super::Matrix;
use crate::error::{Error, Result};

/// Compares an analytic gradient against central differences of `f` at `at`.
///
/// Returns the maximum over entries of
/// `|analytic - central| / (|analytic| + |central| + 1e-12)`.
pub fn finite_diff_check<F, G>(f: F, grad: G, at: &Matrix, step: f64) -> Result<f64>
where
    F: Fn(&Matrix) -> Result<f64>,
    G: Fn(&Matrix) -> Result<Matrix>,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let analytic = grad(at)?;
    if analytic.shape() != at.shape() {
        return Err(Error::dim("finite_diff_check", analytic.shape(), at.shape()));
    }
    let mut probe = at.clone();
    let mut worst: f64 = 0.0;
    for idx in 0..at.len() {
        let orig = at.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + step;
        let up = f(&probe)?;
        probe.as_mut_slice()[idx] = orig - step;
        let down = f(&probe)?;
        probe.as_mut_slice()[idx] = orig;
        let central = (up - down) / (2.0 * step);
        let a = analytic.as_slice()[idx];
        worst = worst.max((a - central).abs() / (a.abs() + central.abs() + 1e-12));
    }
    Ok(worst)
}
