use crate::error::{Error, Result};

/// Compares analytic gradients against central differences.
///
/// `loss_fn` maps a flat parameter vector to `(loss, analytic gradient)`.
/// Returns the largest coordinate-wise relative error, using
/// `max(|analytic|, |numeric|, 1e-8)` as the denominator.
pub fn grad_check<F>(loss_fn: F, params: &[f64], epsilon: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::config(format!(
            "epsilon {epsilon} outside (0, 1e-2]"
        )));
    }
    let (loss, analytic) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::domain(format!("non-finite loss {loss}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::shape(format!(
            "{} gradient entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        probe[i] = params[i] + epsilon;
        let (up, _) = loss_fn(&probe)?;
        probe[i] = params[i] - epsilon;
        let (down, _) = loss_fn(&probe)?;
        probe[i] = params[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite loss probing coordinate {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * epsilon);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
