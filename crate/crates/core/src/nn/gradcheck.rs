use alloc::string::String;
use alloc::vec::Vec;

use super::params::{flatten_grads, flatten_values, load_flat, param_groups, zero_grads, Parameters};
use crate::math;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Worst relative error per named parameter block, when checked through a model.
    pub per_group: Vec<(String, f64)>,
}

/// Relative error whose denominator is floored at `1e-6 * max(|f|, 1)`:
/// gradients that small relative to the loss itself are below what central
/// differences resolve in f64, so they compare as equal. Scaling the loss
/// leaves the error unchanged.
fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    math::abs(a - n) / math::abs(a).max(math::abs(n)).max(floor)
}

fn floor_for(loss: f64) -> f64 {
    1e-6 * math::abs(loss).max(1.0)
}

fn central_differences<F: FnMut(&[f64]) -> f64>(loss: &mut F, params: &[f64], coords: &[usize], h: f64) -> Vec<f64> {
    let mut theta = params.to_vec();
    let out = coords
        .iter()
        .map(|&i| {
            let orig = theta[i];
            theta[i] = orig + h;
            let up = loss(&theta);
            theta[i] = orig - h;
            let down = loss(&theta);
            theta[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect();
    out
}

fn summarize(analytic: &[f64], numeric: &[f64], coords: &[usize], floor: f64) -> GradCheckReport {
    let mut rep = GradCheckReport { checked: coords.len(), ..Default::default() };
    for (k, &i) in coords.iter().enumerate() {
        let err = rel_error(analytic[i], numeric[k], floor);
        if k == 0 || err > rep.max_rel_error {
            rep.max_rel_error = err;
            rep.worst_coordinate = i;
            rep.analytic = analytic[i];
            rep.numeric = numeric[k];
        }
    }
    rep
}

/// Central differences `(f(t + h) - f(t - h)) / 2h` at the listed coordinates,
/// compared against `analytic`.
pub fn finite_diff_grad_check<F>(mut loss: F, params: &[f64], analytic: &[f64], coords: &[usize], h: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    let floor = floor_for(loss(params));
    let numeric = central_differences(&mut loss, params, coords, h);
    summarize(analytic, &numeric, coords, floor)
}

/// Gradient check of a whole model. `loss_and_grad` evaluates the loss and
/// accumulates gradients into the (already zeroed) buffers of the model it is
/// given. Up to `per_group` evenly spaced coordinates of every parameter block
/// are checked.
pub fn check_model_gradients<P, F>(model: &mut P, mut loss_and_grad: F, per_group: usize, h: f64) -> GradCheckReport
where
    P: Parameters + Clone,
    F: FnMut(&mut P) -> f64,
{
    zero_grads(model);
    let floor = floor_for(loss_and_grad(model));
    let analytic = flatten_grads(model);
    let theta = flatten_values(model);
    let mut coords = Vec::new();
    let mut spans = Vec::new();
    for (name, off, len) in param_groups(model) {
        let start = coords.len();
        let k = per_group.min(len).max(1);
        for j in 0..k {
            coords.push(off + j * len / k);
        }
        spans.push((name, start, coords.len()));
    }
    let mut probe = model.clone();
    let mut eval = |p: &[f64]| {
        load_flat(&mut probe, p);
        zero_grads(&mut probe);
        loss_and_grad(&mut probe)
    };
    let numeric = central_differences(&mut eval, &theta, &coords, h);
    let mut rep = summarize(&analytic, &numeric, &coords, floor);
    for (name, s, e) in spans {
        let worst = (s..e).map(|k| rel_error(analytic[coords[k]], numeric[k], floor)).fold(0.0, f64::max);
        rep.per_group.push((name, worst));
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let rep = finite_diff_grad_check(|p| p[0] * p[0], &[1.0], &[2.0], &[0], 1e-5);
        assert!((rep.numeric - 2.0).abs() < 1e-8);
        assert!(rep.max_rel_error < 1e-8);
    }

    #[test]
    fn detects_wrong_gradient() {
        let rep = finite_diff_grad_check(|p| p[0] * p[0] * p[0], &[2.0], &[1.0], &[0], 1e-5);
        assert!(rep.max_rel_error > 0.5);
    }
}
