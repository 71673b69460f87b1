use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Log-variance is clamped to `[-LOG_VAR_BOUND, LOG_VAR_BOUND]` before exponentiation.
pub const LOG_VAR_BOUND: f64 = 10.0;

/// Diagonal Gaussian posterior `q(z|x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLatent {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl GaussianLatent {
    /// Clamps the raw log-variance; returns the latent and a mask of coordinates
    /// left unclamped (gradient passes only there).
    pub fn from_raw(mean: &[f64], raw_log_variance: &[f64]) -> (Self, Vec<bool>) {
        let mut mask = Vec::with_capacity(raw_log_variance.len());
        let lv = raw_log_variance
            .iter()
            .map(|&v| {
                mask.push((-LOG_VAR_BOUND..=LOG_VAR_BOUND).contains(&v));
                v.clamp(-LOG_VAR_BOUND, LOG_VAR_BOUND)
            })
            .collect();
        (Self { mean: mean.to_vec(), log_variance: lv }, mask)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// KL(q || N(0, I)) = 0.5 * sum(exp(lv) + mu^2 - 1 - lv).
pub fn kl_divergence_diag_gaussian(q: &GaussianLatent) -> f64 {
    q.mean
        .iter()
        .zip(&q.log_variance)
        .map(|(&m, &lv)| 0.5 * (math::exp(lv) + m * m - 1.0 - lv))
        .sum()
}

/// `z = mu + exp(lv / 2) * noise`.
pub fn reparameterize(q: &GaussianLatent, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != q.dim() {
        return Err(Error::ShapeMismatch { expected: alloc::vec![q.dim()], got: alloc::vec![noise.len()] });
    }
    Ok(q.mean
        .iter()
        .zip(&q.log_variance)
        .zip(noise)
        .map(|((&m, &lv), &e)| m + math::exp(0.5 * lv) * e)
        .collect())
}
