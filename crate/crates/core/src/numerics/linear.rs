use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;

/// Affine layer `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

/// Input captured by [`Linear::forward`].
#[derive(Debug, Clone)]
pub struct LinearTape {
    input: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Tensor2::zeros(outputs, inputs), bias: vec![0.0; outputs] }
    }

    /// Weights uniform in `[-bound, bound]`, zero bias.
    pub fn uniform(inputs: usize, outputs: usize, bound: f64, rng: &mut Rng) -> Self {
        let mut layer = Self::zeros(inputs, outputs);
        for w in layer.weight.data_mut() {
            *w = rng.gen_range(-bound..=bound);
        }
        layer
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, LinearTape)> {
        let out = linear_forward(&self.weight, &self.bias, input)?;
        Ok((out, LinearTape { input: input.to_vec() }))
    }

    /// Accumulates parameter gradients into `grads` and returns `∂L/∂input`.
    pub fn backward(&self, tape: LinearTape, d_out: &[f64], grads: &mut Linear) -> Vec<f64> {
        grads.weight.outer_acc(d_out, &tape.input);
        for (g, d) in grads.bias.iter_mut().zip(d_out) {
            *g += d;
        }
        let mut d_in = vec![0.0; self.inputs()];
        self.weight.matvec_t_acc(d_out, &mut d_in);
        d_in
    }
}

pub fn linear_forward(weights: &Tensor2, bias: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    check_dim("linear input", weights.cols(), input.len())?;
    check_dim("linear bias", weights.rows(), bias.len())?;
    if !input.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "linear input" });
    }
    let mut out = bias.to_vec();
    weights.matvec_acc(input, &mut out);
    Ok(out)
}
