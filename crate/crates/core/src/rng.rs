//! Seed derivation and sampling helpers.
//!
//! Every random decision in the simulator draws from a ChaCha8 stream whose seed
//! is derived from the master seed plus a tag path, so any sub-computation can be
//! replayed in isolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a tag path into a base seed.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t.wrapping_add(0x51_7CC1_B727_220A))))
}

pub fn rng_from(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn rng_for(base: u64, path: &[u64]) -> SimRng {
    rng_from(derive(base, path))
}

/// Standard normal draw (Marsaglia polar method, one value per accepted pair).
/// Only `libm` math is involved, so streams are bit-identical whatever std
/// features the rest of the build enables.
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u = 2.0 * rng.random::<f64>() - 1.0;
        let v = 2.0 * rng.random::<f64>() - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * crate::math::sqrt(-2.0 * crate::math::ln(s) / s);
        }
    }
}

#[inline]
pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Uniform integer in `0..n`.
#[inline]
pub fn below<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n)
}

/// Fisher-Yates shuffle.
pub fn shuffle<T, R: Rng + ?Sized>(rng: &mut R, xs: &mut [T]) {
    for i in (1..xs.len()).rev() {
        let j = rng.random_range(0..=i);
        xs.swap(i, j);
    }
}

/// `k` distinct indices from `0..n`, in draw order.
pub fn choose_distinct<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> alloc::vec::Vec<usize> {
    let mut idx: alloc::vec::Vec<usize> = (0..n).collect();
    let k = k.min(n);
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

// Stream tags.
pub mod tag {
    pub const BASE_DATA: u64 = 1;
    pub const GROUND_TRUTH: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const MACHINE_CORPUS: u64 = 4;
    pub const BATCH: u64 = 5;
    pub const PIPELINE: u64 = 6;
    pub const SCENARIO: u64 = 7;
    pub const INJECT: u64 = 8;
    pub const ASSIGN: u64 = 9;
    pub const EXEC: u64 = 10;
    pub const TRACE: u64 = 11;
    pub const SINGULAR: u64 = 12;
    pub const DIAGNOSIS: u64 = 13;
    pub const FOLDS: u64 = 14;
    pub const EPISODE: u64 = 15;
    pub const MITIGATION: u64 = 16;
    pub const NODES: u64 = 17;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_path_sensitive() {
        assert_ne!(derive(7, &[1, 2]), derive(7, &[2, 1]));
        assert_eq!(derive(7, &[1, 2]), derive(7, &[1, 2]));
        assert_ne!(derive(7, &[]), derive(8, &[]));
    }

    #[test]
    fn normal_moments() {
        let mut rng = rng_from(11);
        let n = 200_000;
        let xs: alloc::vec::Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let m = crate::math::mean(&xs);
        let v = crate::math::variance(&xs);
        let k4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64;
        // standard errors: 1/sqrt(n) for the mean, sqrt(2/n) for the variance
        assert!(m.abs() < 4.0 / (n as f64).sqrt(), "{m}");
        assert!((v - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "{v}");
        assert!((k4 - 3.0).abs() < 0.1, "{k4}");
    }

    #[test]
    fn choose_distinct_has_no_repeats() {
        let mut rng = rng_from(3);
        for _ in 0..50 {
            let mut v = choose_distinct(&mut rng, 10, 4);
            v.sort_unstable();
            v.dedup();
            assert_eq!(v.len(), 4);
        }
    }
}
