use alloc::vec::Vec;

use crate::math;

/// Loss `-log softmax(logits)[target]` and its gradient `softmax - onehot`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| math::exp(z - max)).sum();
    let log_z = max + math::ln(sum);
    let loss = log_z - logits[target];
    let mut grad: Vec<f64> = logits.iter().map(|&z| math::exp(z - log_z)).collect();
    grad[target] -= 1.0;
    (loss, grad)
}

pub fn softmax_cross_entropy_loss(logits: &[f64], target: usize) -> f64 {
    softmax_cross_entropy(logits, target).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_grad_check;

    #[test]
    fn uniform_logits_give_ln2() {
        let (l, _) = softmax_cross_entropy(&[0.0, 0.0], 0);
        assert!((l - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logits_have_tiny_loss() {
        let (l, _) = softmax_cross_entropy(&[10.0, -10.0], 0);
        // ln(1 + e^-20)
        assert!(l < 1e-4);
        assert!((l - math::ln(1.0 + math::exp(-20.0))).abs() < 1e-15);
    }

    #[test]
    fn gradient_sums_to_zero() {
        let (_, g) = softmax_cross_entropy(&[3.0, -1.0, 0.5, 200.0], 2);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = [0.3, -1.2, 2.2, 0.0];
        let (_, g) = softmax_cross_entropy(&logits, 1);
        let rep = finite_diff_grad_check(|p| softmax_cross_entropy_loss(p, 1), &logits, &g, &[0, 1, 2, 3], 1e-5);
        assert!(rep.max_rel_error <= 1e-6, "{rep:?}");
    }
}
