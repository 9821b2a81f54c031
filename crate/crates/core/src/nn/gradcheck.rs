use crate::{Error, Result};

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub num_params: usize,
}

/// Compares analytic gradients against central differences.
///
/// `loss_fn` maps a flat parameter vector to `(loss, analytic gradient)`.
/// The relative error per coordinate is `|a - n| / max(1, |a|, |n|)`; the
/// maximum over all coordinates is reported.
pub fn finite_diff_check<F>(mut loss_fn: F, params: &[f64], epsilon: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let (base, analytic) = loss_fn(params)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is {base}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradient entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut theta = params.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        num_params: params.len(),
    };
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + epsilon;
        let (plus, _) = loss_fn(&theta)?;
        theta[i] = orig - epsilon;
        let (minus, _) = loss_fn(&theta)?;
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("loss not finite around coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}
