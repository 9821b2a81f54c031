use std::fmt;
use std::str::FromStr;

use rand::RngExt;

use super::params::ParamSet;
use super::tensor::Tensor2;
use crate::seed::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, v: &mut [f64]) {
        match self {
            Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` by the activation derivative, expressed in terms of
    /// the activation output.
    fn backprop(self, out: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Relu => {
                for (g, &o) in grad.iter_mut().zip(out) {
                    if o <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (g, &o) in grad.iter_mut().zip(out) {
                    *g *= 1.0 - o * o;
                }
            }
            Activation::Identity => {}
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            _ => Err(Error::Config(format!("unknown activation `{s}`"))),
        }
    }
}

/// Fully connected layer `act(W x + b)` with `W` shaped `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Tensor2,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weights: Tensor2, biases: Vec<f64>, activation: Activation) -> Result<Self> {
        if biases.len() != weights.rows() {
            return Err(Error::Shape(format!(
                "{} biases for a layer with {} outputs",
                biases.len(),
                weights.rows()
            )));
        }
        Ok(Dense {
            weights,
            biases,
            activation,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs).map(|_| rng.random_range(-a..a)).collect();
        Dense {
            weights: Tensor2::from_vec(outputs, inputs, data).expect("sized above"),
            biases: vec![0.0; outputs],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        self.weights.matvec_into(x, out);
        for (o, b) in out.iter_mut().zip(&self.biases) {
            *o += b;
        }
        self.activation.apply(out);
    }
}

/// Per-layer outputs of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    outputs: Vec<Vec<f64>>,
}

impl Trace {
    pub fn features(&self) -> &[f64] {
        self.outputs.last().expect("backbone has at least one layer")
    }
}

/// Multi-layer perceptron producing a feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpBackbone {
    layers: Vec<Dense>,
}

impl MlpBackbone {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("backbone needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Shape(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    k + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(MlpBackbone { layers })
    }

    /// Builds a backbone with the given layer widths (`dims[0]` is the input
    /// dimension, the last entry the feature dimension). Hidden layers use
    /// `hidden`; the feature layer is linear.
    pub fn init(dims: &[usize], hidden: Activation, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid backbone dims {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k == last { Activation::Identity } else { hidden };
                Dense::glorot(w[0], w[1], act, rng)
            })
            .collect();
        MlpBackbone::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "backbone expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.outputs.pop().expect("non-empty"))
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut out = vec![0.0; layer.output_dim()];
            let x = outputs.last().map_or(input, |v| v.as_slice());
            layer.forward_into(x, &mut out);
            outputs.push(out);
        }
        Ok(Trace { outputs })
    }

    /// Accumulates `scale * dL/dθ` into `grads` given `dL/dfeatures`.
    pub fn backward(&self, input: &[f64], trace: &Trace, grad_features: &[f64], grads: &mut MlpBackbone, scale: f64) {
        debug_assert_eq!(grad_features.len(), self.feature_dim());
        let mut delta = grad_features.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            layer.activation.backprop(&trace.outputs[k], &mut delta);
            let x = if k == 0 { input } else { &trace.outputs[k - 1] };
            let g = &mut grads.layers[k];
            g.weights.add_outer(scale, &delta, x);
            for (gb, d) in g.biases.iter_mut().zip(&delta) {
                *gb += scale * d;
            }
            if k > 0 {
                let mut prev = vec![0.0; layer.input_dim()];
                layer.weights.matvec_t_acc(&delta, &mut prev);
                delta = prev;
            }
        }
    }
}

impl ParamSet for MlpBackbone {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.biases.as_slice()])
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.biases.as_mut_slice()])
            .collect()
    }
}
