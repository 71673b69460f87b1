use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::Parameters;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Softmax,
}

impl Activation {
    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => z.iter_mut().for_each(|v| *v = math::tanh(*v)),
            Activation::Softmax => {
                let p = math::softmax(z);
                z.copy_from_slice(&p);
            }
        }
    }

    /// Turns `dy` (gradient w.r.t. the activation output `y`) into the gradient
    /// w.r.t. the pre-activation, in place.
    fn backprop(self, y: &[f64], dy: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => dy.iter_mut().zip(y).for_each(|(d, &v)| {
                if v <= 0.0 {
                    *d = 0.0
                }
            }),
            Activation::Tanh => dy.iter_mut().zip(y).for_each(|(d, &v)| *d *= 1.0 - v * v),
            Activation::Softmax => {
                let dot: f64 = dy.iter().zip(y).map(|(d, v)| d * v).sum();
                dy.iter_mut().zip(y).for_each(|(d, &v)| *d = v * (*d - dot));
            }
        }
    }
}

/// Fully connected layer `activation(W x + b)` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
    #[serde(skip)]
    grad_w: Vec<f64>,
    #[serde(skip)]
    grad_b: Vec<f64>,
}

/// Values kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCache {
    pub input: Tensor,
    pub output: Tensor,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weights: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
            activation,
            grad_w: vec![0.0; output * input],
            grad_b: vec![0.0; output],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let mut layer = Self::zeros(input, output, activation);
        let limit = math::sqrt(6.0 / (input + output) as f64);
        for w in layer.weights.data_mut() {
            *w = (rng.random::<f64>() * 2.0 - 1.0) * limit;
        }
        layer
    }

    pub fn from_parts(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weights.shape().len() != 2 || bias.shape() != [weights.shape()[0]] {
            return Err(Error::ShapeMismatch { expected: weights.shape().to_vec(), got: bias.shape().to_vec() });
        }
        let (o, i) = (weights.shape()[0], weights.shape()[1]);
        Ok(Self { weights, bias, activation, grad_w: vec![0.0; o * i], grad_b: vec![0.0; o] })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        let n_in = self.input_dim();
        let w = self.weights.data();
        for (o, (y, &b)) in out.iter_mut().zip(self.bias.data()).enumerate() {
            let row = &w[o * n_in..(o + 1) * n_in];
            *y = b + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        self.activation.apply(out);
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.forward_into(x, &mut out);
        out
    }

    /// Accumulates parameter gradients given the forward input `x`, output `y`
    /// and upstream gradient `dy`; writes the input gradient into `dx` if given.
    pub fn backward(&mut self, x: &[f64], y: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        self.ensure_grad_buffers();
        let n_in = self.input_dim();
        let mut dz = dy.to_vec();
        self.activation.backprop(y, &mut dz);
        for (o, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            self.grad_b[o] += d;
            let g = &mut self.grad_w[o * n_in..(o + 1) * n_in];
            g.iter_mut().zip(x).for_each(|(g, &xi)| *g += d * xi);
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            let w = self.weights.data();
            for (o, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                dx.iter_mut().zip(row).for_each(|(g, &wi)| *g += d * wi);
            }
        }
    }

    fn ensure_grad_buffers(&mut self) {
        if self.grad_w.len() != self.weights.len() {
            self.grad_w = vec![0.0; self.weights.len()];
            self.grad_b = vec![0.0; self.bias.len()];
        }
    }

    pub fn grad_weights(&self) -> &[f64] {
        &self.grad_w
    }

    pub fn grad_bias(&self) -> &[f64] {
        &self.grad_b
    }
}

impl Parameters for DenseLayer {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64], &mut [f64])) {
        self.ensure_grad_buffers();
        let wname = alloc::format!("{prefix}.weight");
        let bname = alloc::format!("{prefix}.bias");
        let wshape = self.weights.shape().to_vec();
        let bshape = self.bias.shape().to_vec();
        f(&wname, &wshape, self.weights.data_mut(), &mut self.grad_w);
        f(&bname, &bshape, self.bias.data_mut(), &mut self.grad_b);
    }
}

/// Applies `layer` to a `[in]` vector or a `[rows, in]` matrix.
pub fn dense_forward(layer: &DenseLayer, x: &Tensor) -> Result<(Tensor, DenseCache)> {
    if x.last_dim() != layer.input_dim() || x.shape().is_empty() || x.shape().len() > 2 {
        return Err(Error::ShapeMismatch { expected: vec![layer.input_dim()], got: x.shape().to_vec() });
    }
    let rows = x.rows();
    let mut out = Vec::with_capacity(rows * layer.output_dim());
    for r in 0..rows {
        out.extend(layer.forward(x.row(r)));
    }
    let shape = if x.shape().len() == 1 { vec![layer.output_dim()] } else { vec![rows, layer.output_dim()] };
    let y = Tensor::new(shape, out)?;
    y.check_finite("dense output")?;
    Ok((y.clone(), DenseCache { input: x.clone(), output: y }))
}
