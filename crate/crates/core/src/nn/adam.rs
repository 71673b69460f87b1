use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::params::Parameters;
use crate::error::{Error, Result};
use crate::math;

/// Bias-corrected Adam. Moment buffers are allocated lazily, one per parameter
/// block in visiting order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: Vec::new(), second: Vec::new() }
    }

    /// One update of every parameter of `model` from its accumulated gradients,
    /// each scaled by `grad_scale` first.
    pub fn step_model<P: Parameters + ?Sized>(&mut self, model: &mut P, grad_scale: f64) {
        self.step += 1;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let c1 = 1.0 - math::powf(b1, self.step as f64);
        let c2 = 1.0 - math::powf(b2, self.step as f64);
        let mut slot = 0;
        let first = &mut self.first;
        let second = &mut self.second;
        model.visit_params("", &mut |_, _, values, grads| {
            if first.len() <= slot {
                first.push(vec![0.0; values.len()]);
                second.push(vec![0.0; values.len()]);
            }
            let (m, v) = (&mut first[slot], &mut second[slot]);
            for i in 0..values.len() {
                let g = grads[i] * grad_scale;
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                values[i] -= lr * (m[i] / c1) / (math::sqrt(v[i] / c2) + eps);
            }
            slot += 1;
        });
    }
}

/// Adam on a single flat parameter vector.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch { expected: vec![params.len()], got: vec![grads.len()] });
    }
    if let Some(m) = state.first.first() {
        if m.len() != params.len() {
            return Err(Error::ShapeMismatch { expected: vec![m.len()], got: vec![params.len()] });
        }
    }
    struct Flat<'a> {
        p: &'a mut [f64],
        g: Vec<f64>,
    }
    impl Parameters for Flat<'_> {
        fn visit_params(&mut self, _: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64], &mut [f64])) {
            let shape = [self.p.len()];
            f("flat", &shape, self.p, &mut self.g);
        }
    }
    let mut flat = Flat { p: params, g: grads.to_vec() };
    state.step_model(&mut flat, 1.0);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut st = AdamState::new(0.01);
        let mut p = vec![1.0, -2.0, 3.5];
        for _ in 0..10 {
            adam_step(&mut st, &mut p, &[0.0, 0.0, 0.0]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        // with m_hat = g and v_hat = g^2 the step is lr * g / (|g| + eps)
        let lr = 1e-3;
        let mut st = AdamState::new(lr);
        let mut p = vec![0.0, 0.0];
        let mut last = p.clone();
        for _ in 0..2000 {
            adam_step(&mut st, &mut p, &[0.7, -3.0]).unwrap();
            let d0 = (p[0] - last[0]).abs();
            let d1 = (p[1] - last[1]).abs();
            assert!((d0 - lr).abs() < 1e-7 && (d1 - lr).abs() < 1e-7);
            last = p.clone();
        }
    }

    #[test]
    fn mismatched_shapes_error() {
        let mut st = AdamState::new(0.1);
        assert!(adam_step(&mut st, &mut [0.0; 2], &[1.0]).is_err());
        adam_step(&mut st, &mut [0.0; 2], &[1.0, 1.0]).unwrap();
        assert!(adam_step(&mut st, &mut [0.0; 3], &[1.0; 3]).is_err());
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut st = AdamState::new(0.05);
            let mut p = vec![0.3, -0.1];
            let mut traj = Vec::new();
            for k in 0..50 {
                let g = [p[0] * 2.0 + k as f64 * 0.01, p[1] - 1.0];
                adam_step(&mut st, &mut p, &g).unwrap();
                traj.push(p.clone());
            }
            traj
        };
        assert_eq!(run(), run());
    }
}
