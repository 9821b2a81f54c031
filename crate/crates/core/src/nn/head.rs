use super::params::ParamSet;
use super::tensor::Tensor2;
use crate::seed::Rng;
use crate::{Error, Result};

/// Last fully connected layer mapping features to identity logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub weights: Tensor2,
    pub biases: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(weights: Tensor2, biases: Vec<f64>) -> Result<Self> {
        if biases.len() != weights.rows() {
            return Err(Error::Shape(format!(
                "{} biases for {} classes",
                biases.len(),
                weights.rows()
            )));
        }
        Ok(ClassifierHead { weights, biases })
    }

    pub fn init(num_classes: usize, feature_dim: usize, rng: &mut Rng) -> Self {
        let dense = super::Dense::glorot(feature_dim, num_classes, super::Activation::Identity, rng);
        ClassifierHead {
            weights: dense.weights,
            biases: dense.biases,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "head expects {} features, got {}",
                self.feature_dim(),
                features.len()
            )));
        }
        let mut out = vec![0.0; self.num_classes()];
        self.weights.matvec_into(features, &mut out);
        for (o, b) in out.iter_mut().zip(&self.biases) {
            *o += b;
        }
        Ok(out)
    }

    /// Accumulates `scale * dL/dθ` into `grads` and returns `scale * dL/dfeatures`.
    pub fn backward(&self, features: &[f64], grad_logits: &[f64], grads: &mut ClassifierHead, scale: f64) -> Vec<f64> {
        grads.weights.add_outer(scale, grad_logits, features);
        for (gb, g) in grads.biases.iter_mut().zip(grad_logits) {
            *gb += scale * g;
        }
        let scaled: Vec<f64> = grad_logits.iter().map(|g| g * scale).collect();
        let mut grad_features = vec![0.0; self.feature_dim()];
        self.weights.matvec_t_acc(&scaled, &mut grad_features);
        grad_features
    }
}

impl ParamSet for ClassifierHead {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.weights.as_slice(), &self.biases]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weights.as_mut_slice(), &mut self.biases]
    }
}
