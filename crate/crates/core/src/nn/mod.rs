//! Minimal dense neural-network machinery at double precision.

mod gradcheck;
mod head;
mod mlp;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheck};
pub use head::ClassifierHead;
pub use mlp::{Activation, Dense, MlpBackbone, Trace};
pub use optim::{sgd_step, SgdConfig, SgdState};
pub use params::ParamSet;
pub use tensor::{dot, Tensor2};

use crate::{Error, Result};

/// Logistic sigmoid, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax cross-entropy of `logits` against class `label`.
///
/// Returns the loss and its gradient with respect to the logits
/// (`softmax - onehot`). Uses max-subtraction, so arbitrarily large logits are
/// fine.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.is_empty() {
        return Err(Error::Shape("softmax over empty logits".into()));
    }
    if label >= logits.len() {
        return Err(Error::LabelRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = grad.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    for g in &mut grad {
        *g /= sum;
    }
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let (loss, grad) = softmax_cross_entropy(&[0.3; 10], 4).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((grad[4] + 0.9).abs() < 1e-12);
        assert!((grad[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_approach_zero_loss() {
        let (loss, _) = softmax_cross_entropy(&[0.0, 800.0, 0.0], 1).unwrap();
        assert!((0.0..1e-300).contains(&loss));
    }

    #[test]
    fn matches_direct_formula() {
        let logits = [1.0, 2.0, 3.0];
        let denom: f64 = logits.iter().map(|z: &f64| z.exp()).sum();
        let direct = -(logits[2].exp() / denom).ln();
        let (loss, _) = softmax_cross_entropy(&logits, 2).unwrap();
        assert!((loss - direct).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(softmax_cross_entropy(&[], 0), Err(Error::Shape(_))));
        assert!(matches!(
            softmax_cross_entropy(&[1.0], 1),
            Err(Error::LabelRange { .. })
        ));
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(9.0) - 0.999_876_605_424_014).abs() < 1e-12);
    }
}
