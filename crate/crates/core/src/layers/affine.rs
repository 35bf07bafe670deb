use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{contract, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// `y = act(x Wᵀ + b)` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    weights: Tensor,
    bias: Tensor,
    activation: Activation,
}

impl AffineLayer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weights.rank() != 2 || bias.rank() != 1 || weights.rows() != bias.len() {
            return Err(contract(format!(
                "affine: weights {:?} incompatible with bias {:?}",
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, zero bias.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self {
            weights: Tensor::from_parts(vec![outputs, inputs], w),
            bias: Tensor::zeros(&[outputs]),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weights, &mut self.bias]
    }

    pub(crate) fn params(&self) -> Vec<&Tensor> {
        vec![&self.weights, &self.bias]
    }

    pub(crate) fn forward(&self, g: &mut Graph, x: Var, leaves: &mut Vec<Var>) -> Result<Var> {
        let w = g.param(self.weights.clone());
        let b = g.param(self.bias.clone());
        leaves.extend([w, b]);
        let wt = g.transpose(w)?;
        let xw = g.matmul(x, wt)?;
        let y = g.add(xw, b)?;
        match self.activation {
            Activation::Relu => g.relu(y),
            Activation::None => Ok(y),
        }
    }
}
