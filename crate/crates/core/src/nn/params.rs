use crate::{Error, Result};

/// A collection of parameter tensors with a fixed traversal order.
///
/// Gradients are stored in a value of the same type (a zeroed clone), so the
/// optimizer can walk parameters and gradients in lockstep.
pub trait ParamSet {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn zero(&mut self) {
        for s in self.param_slices_mut() {
            s.fill(0.0);
        }
    }

    fn to_flat(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} values, expected {n}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}
