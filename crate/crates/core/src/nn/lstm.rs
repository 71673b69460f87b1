use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::Parameters;
use super::tensor::Tensor;
use crate::error::{ensure_finite, Error, Result};
use crate::math;

/// LSTM cell with gates stacked as `[input, forget, output, candidate]` in a
/// single `[4h, in + h]` weight matrix acting on `[x; h_prev]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    pub weights: Tensor,
    pub bias: Tensor,
    #[serde(skip)]
    grad_w: Vec<f64>,
    #[serde(skip)]
    grad_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmStepCache {
    xh: Vec<f64>,
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            weights: Tensor::zeros(&[4 * hidden, input + hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
            grad_w: vec![0.0; 4 * hidden * (input + hidden)],
            grad_b: vec![0.0; 4 * hidden],
        }
    }

    /// Uniform(-1/sqrt(h), 1/sqrt(h)) weights; forget-gate bias 1.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut cell = Self::zeros(input, hidden);
        let k = 1.0 / math::sqrt(hidden as f64);
        for w in cell.weights.data_mut() {
            *w = (rng.random::<f64>() * 2.0 - 1.0) * k;
        }
        for b in &mut cell.bias.data_mut()[hidden..2 * hidden] {
            *b = 1.0;
        }
        cell
    }

    /// One step; returns `(h, c, cache)`.
    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>, LstmStepCache) {
        let h = self.hidden;
        let cols = self.input + h;
        let mut xh = Vec::with_capacity(cols);
        xh.extend_from_slice(x);
        xh.extend_from_slice(h_prev);
        let w = self.weights.data();
        let mut gates = self.bias.data().to_vec();
        for (r, z) in gates.iter_mut().enumerate() {
            let row = &w[r * cols..(r + 1) * cols];
            *z += row.iter().zip(&xh).map(|(a, b)| a * b).sum::<f64>();
        }
        for z in &mut gates[..3 * h] {
            *z = math::sigmoid(*z);
        }
        for z in &mut gates[3 * h..] {
            *z = math::tanh(*z);
        }
        let mut c = vec![0.0; h];
        let mut h_out = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        for k in 0..h {
            let (i, f, o, g) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            c[k] = f * c_prev[k] + i * g;
            tanh_c[k] = math::tanh(c[k]);
            h_out[k] = o * tanh_c[k];
        }
        let cache = LstmStepCache { xh, gates, c_prev: c_prev.to_vec(), tanh_c };
        (h_out, c, cache)
    }

    /// Backward through one step given gradients w.r.t. `h` and `c`; returns
    /// `(dx, dh_prev, dc_prev)` and accumulates parameter gradients.
    pub fn backward_step(&mut self, cache: &LstmStepCache, dh: &[f64], dc: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = self.hidden;
        let cols = self.input + h;
        if self.grad_w.len() != self.weights.len() {
            self.grad_w = vec![0.0; self.weights.len()];
            self.grad_b = vec![0.0; self.bias.len()];
        }
        let g = &cache.gates;
        let mut dz = vec![0.0; 4 * h];
        let mut dc_prev = vec![0.0; h];
        for k in 0..h {
            let (i, f, o, gg) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
            let tc = cache.tanh_c[k];
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dz[k] = dct * gg * i * (1.0 - i);
            dz[h + k] = dct * cache.c_prev[k] * f * (1.0 - f);
            dz[2 * h + k] = dh[k] * tc * o * (1.0 - o);
            dz[3 * h + k] = dct * i * (1.0 - gg * gg);
            dc_prev[k] = dct * f;
        }
        let w = self.weights.data();
        let mut dxh = vec![0.0; cols];
        for (r, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            self.grad_b[r] += d;
            let gw = &mut self.grad_w[r * cols..(r + 1) * cols];
            gw.iter_mut().zip(&cache.xh).for_each(|(a, &b)| *a += d * b);
            let row = &w[r * cols..(r + 1) * cols];
            dxh.iter_mut().zip(row).for_each(|(a, &b)| *a += d * b);
        }
        let dh_prev = dxh.split_off(self.input);
        (dxh, dh_prev, dc_prev)
    }
}

impl Parameters for LstmCell {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64], &mut [f64])) {
        if self.grad_w.len() != self.weights.len() {
            self.grad_w = vec![0.0; self.weights.len()];
            self.grad_b = vec![0.0; self.bias.len()];
        }
        let ws = self.weights.shape().to_vec();
        let bs = self.bias.shape().to_vec();
        f(&alloc::format!("{prefix}.weight"), &ws, self.weights.data_mut(), &mut self.grad_w);
        f(&alloc::format!("{prefix}.bias"), &bs, self.bias.data_mut(), &mut self.grad_b);
    }
}

pub fn lstm_cell_step(cell: &LstmCell, x_t: &Tensor, h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x_t.len() != cell.input || h_prev.len() != cell.hidden || c_prev.len() != cell.hidden {
        return Err(Error::ShapeMismatch {
            expected: vec![cell.input, cell.hidden, cell.hidden],
            got: vec![x_t.len(), h_prev.len(), c_prev.len()],
        });
    }
    let (h, c, _) = cell.step(x_t.data(), h_prev, c_prev);
    ensure_finite(&h, "lstm hidden state")?;
    ensure_finite(&c, "lstm cell state")?;
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flatten_grads, flatten_values, load_flat, zero_grads};
    use crate::rng;

    #[test]
    fn zero_parameters_fixed_point() {
        let cell = LstmCell::zeros(3, 4);
        let (h, c) = lstm_cell_step(&cell, &Tensor::vector(vec![1.0, -2.0, 0.5]), &[0.0; 4], &[0.0; 4]).unwrap();
        assert_eq!(h, vec![0.0; 4]);
        assert_eq!(c, vec![0.0; 4]);
    }

    #[test]
    fn hidden_state_bounded() {
        let mut r = rng::rng_from(4);
        let mut cell = LstmCell::init(2, 3, &mut r);
        for w in cell.weights.data_mut() {
            *w *= 20.0;
        }
        let mut h = vec![0.0; 3];
        let mut c = vec![0.0; 3];
        for t in 0..50 {
            let x = Tensor::vector(vec![100.0 * (t as f64).sin(), -300.0]);
            let (h2, c2) = lstm_cell_step(&cell, &x, &h, &c).unwrap();
            assert!(h2.iter().all(|v| v.abs() < 1.0));
            h = h2;
            c = c2;
        }
    }

    #[test]
    fn matches_scalar_gate_oracle() {
        // input 2, hidden 1: gates computed one scalar at a time
        let mut cell = LstmCell::zeros(2, 1);
        let w = [
            0.1, -0.2, 0.3, // i
            0.4, 0.5, -0.6, // f
            -0.7, 0.8, 0.9, // o
            0.2, -0.1, 0.05, // g
        ];
        cell.weights.data_mut().copy_from_slice(&w);
        cell.bias.data_mut().copy_from_slice(&[0.01, -0.02, 0.03, -0.04]);
        let (x0, x1, hp, cp) = (0.7, -1.3, 0.25, -0.4);
        let sig = |z: f64| 1.0 / (1.0 + (-z as f64).exp());
        let i = sig(0.1 * x0 - 0.2 * x1 + 0.3 * hp + 0.01);
        let f = sig(0.4 * x0 + 0.5 * x1 - 0.6 * hp - 0.02);
        let o = sig(-0.7 * x0 + 0.8 * x1 + 0.9 * hp + 0.03);
        let g = (0.2 * x0 - 0.1 * x1 + 0.05 * hp - 0.04_f64).tanh();
        let c = f * cp + i * g;
        let h = o * c.tanh();
        let (hh, cc) = lstm_cell_step(&cell, &Tensor::vector(vec![x0, x1]), &[hp], &[cp]).unwrap();
        assert!((hh[0] - h).abs() < 1e-14);
        assert!((cc[0] - c).abs() < 1e-14);
    }

    #[test]
    fn bptt_gradient_matches_finite_differences() {
        let mut r = rng::rng_from(9);
        let mut cell = LstmCell::init(3, 4, &mut r);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng::normal(&mut r)).collect()).collect();
        let target: Vec<f64> = (0..4).map(|_| rng::normal(&mut r)).collect();
        let loss = |cell: &LstmCell| {
            let (mut h, mut c) = (vec![0.0; 4], vec![0.0; 4]);
            let mut total = 0.0;
            for x in &xs {
                let (h2, c2, _) = cell.step(x, &h, &c);
                h = h2;
                c = c2;
                total += h.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            total
        };
        // analytic
        zero_grads(&mut cell);
        let (mut h, mut c) = (vec![0.0; 4], vec![0.0; 4]);
        let mut caches = Vec::new();
        let mut hs = Vec::new();
        for x in &xs {
            let (h2, c2, cache) = cell.step(x, &h, &c);
            h = h2;
            c = c2;
            hs.push(h.clone());
            caches.push(cache);
        }
        let mut dh_next = vec![0.0; 4];
        let mut dc_next = vec![0.0; 4];
        for t in (0..xs.len()).rev() {
            let dh: Vec<f64> = (0..4).map(|k| dh_next[k] + 2.0 * (hs[t][k] - target[k])).collect();
            let (_, dhp, dcp) = cell.backward_step(&caches[t], &dh, &dc_next);
            dh_next = dhp;
            dc_next = dcp;
        }
        let analytic = flatten_grads(&mut cell);
        let theta = flatten_values(&mut cell);
        let coords: Vec<usize> = (0..theta.len()).collect();
        let mut probe = cell.clone();
        let rep = crate::nn::finite_diff_grad_check(
            |p| {
                load_flat(&mut probe, p);
                loss(&probe)
            },
            &theta,
            &analytic,
            &coords,
            1e-5,
        );
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }
}
