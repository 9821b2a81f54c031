use super::params::ParamSet;
use crate::{Error, Result};

/// SGD with momentum and a linearly decaying learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Length of the learning-rate schedule; `lr_end` is reached at step
    /// `total_steps - 1`.
    pub total_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            momentum: 0.9,
            lr_start: 0.01,
            lr_end: 0.0001,
            total_steps: 1,
            batch_size: 28,
            epochs: 5,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) {
            return Err(Error::Config(format!(
                "learning rates must satisfy lr_start >= lr_end > 0 (got {} -> {})",
                self.lr_start, self.lr_end
            )));
        }
        if self.total_steps == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "total_steps, batch_size and epochs must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate at `step`, affine in the step index.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.total_steps <= 1 {
            return self.lr_start;
        }
        let frac = step.min(self.total_steps - 1) as f64 / (self.total_steps - 1) as f64;
        (1.0 - frac) * self.lr_start + frac * self.lr_end
    }
}

/// Momentum buffers, one per parameter tensor, initialised to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new<P: ParamSet>(params: &P) -> Self {
        SgdState {
            velocity: params.param_slices().iter().map(|s| vec![0.0; s.len()]).collect(),
        }
    }
}

/// Applies one update: `v <- momentum * v - lr(step) * g; θ <- θ + v`.
/// Returns the learning rate used.
pub fn sgd_step<P: ParamSet>(
    params: &mut P,
    grads: &P,
    state: &mut SgdState,
    step: usize,
    config: &SgdConfig,
) -> Result<f64> {
    if step >= config.total_steps {
        return Err(Error::Config(format!(
            "step {step} beyond schedule of {} steps",
            config.total_steps
        )));
    }
    let lr = config.lr_at(step);
    let grad_slices = grads.param_slices();
    let param_slices = params.param_slices_mut();
    if grad_slices.len() != param_slices.len() || state.velocity.len() != param_slices.len() {
        return Err(Error::Shape("parameter, gradient and state tensors differ".into()));
    }
    for ((p, g), v) in param_slices.into_iter().zip(grad_slices).zip(&mut state.velocity) {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(Error::Shape(format!(
                "tensor sizes {} / {} / {}",
                p.len(),
                g.len(),
                v.len()
            )));
        }
        for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = config.momentum * *vi - lr * gi;
            *pi += *vi;
        }
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flat(Vec<f64>);

    impl ParamSet for Flat {
        fn param_slices(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    fn constant(lr: f64, momentum: f64) -> SgdConfig {
        SgdConfig {
            momentum,
            lr_start: lr,
            lr_end: lr,
            total_steps: 10,
            ..SgdConfig::default()
        }
    }

    #[test]
    fn plain_gradient_descent() {
        let mut p = Flat(vec![1.0, -2.0]);
        let g = Flat(vec![0.5, 1.0]);
        let mut st = SgdState::new(&p);
        sgd_step(&mut p, &g, &mut st, 0, &constant(0.1, 0.0)).unwrap();
        assert!((p.0[0] - 0.95).abs() < 1e-15);
        assert!((p.0[1] + 2.1).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Flat(vec![3.0, 4.0]);
        let g = Flat(vec![0.0, 0.0]);
        let mut st = SgdState::new(&p);
        for s in 0..5 {
            sgd_step(&mut p, &g, &mut st, s, &constant(0.1, 0.9)).unwrap();
        }
        assert_eq!(p.0, vec![3.0, 4.0]);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = Flat(vec![0.0]);
        let g = Flat(vec![1.0]);
        let mut st = SgdState::new(&p);
        let cfg = constant(0.1, 0.5);
        sgd_step(&mut p, &g, &mut st, 0, &cfg).unwrap();
        sgd_step(&mut p, &g, &mut st, 1, &cfg).unwrap();
        // v1 = -0.1, v2 = -0.05 - 0.1
        assert!((p.0[0] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn schedule_endpoints_and_linearity() {
        let cfg = SgdConfig {
            total_steps: 101,
            ..SgdConfig::default()
        };
        assert_eq!(cfg.lr_at(0), 0.01);
        assert_eq!(cfg.lr_at(100), 0.0001);
        for s in 1..100 {
            let second = cfg.lr_at(s + 1) - 2.0 * cfg.lr_at(s) + cfg.lr_at(s - 1);
            assert!(second.abs() < 1e-15);
        }
    }

    #[test]
    fn validation() {
        assert!(SgdConfig::default().validate().is_ok());
        let bad = SgdConfig {
            momentum: 1.0,
            ..SgdConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SgdConfig {
            lr_start: 0.001,
            lr_end: 0.01,
            ..SgdConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn shape_mismatch_and_overrun() {
        let mut p = Flat(vec![0.0; 2]);
        let g = Flat(vec![0.0; 3]);
        let mut st = SgdState::new(&p);
        assert!(matches!(
            sgd_step(&mut p, &g, &mut st, 0, &constant(0.1, 0.0)),
            Err(Error::Shape(_))
        ));
        let g = Flat(vec![0.0; 2]);
        assert!(sgd_step(&mut p, &g, &mut st, 10, &constant(0.1, 0.0)).is_err());
    }
}
