use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{MTSSample, CHANNELS};
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Standardization {
    ZScore,
    MinMax,
}

/// Per-channel affine map `x -> (x - offset) / scale`, fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScaler {
    pub kind: Standardization,
    pub offset: [f64; CHANNELS],
    pub scale: [f64; CHANNELS],
}

impl ChannelScaler {
    /// Fits on a training split: mean/std for z-scoring, min/range for min-max.
    /// Degenerate channels get scale 1.
    pub fn fit(kind: Standardization, samples: &[&MTSSample]) -> Result<Self> {
        let count: usize = samples.iter().map(|s| s.len).sum();
        if count == 0 {
            return Err(Error::Empty("scaler training split"));
        }
        let mut offset = [0.0; CHANNELS];
        let mut scale = [1.0; CHANNELS];
        for c in 0..CHANNELS {
            let pooled = samples.iter().flat_map(|s| s.channel(c).iter().copied());
            match kind {
                Standardization::ZScore => {
                    let m = pooled.clone().sum::<f64>() / count as f64;
                    let var = pooled.map(|v| (v - m) * (v - m)).sum::<f64>() / count as f64;
                    offset[c] = m;
                    scale[c] = math::sqrt(var);
                }
                Standardization::MinMax => {
                    let (lo, hi) = pooled.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                    offset[c] = lo;
                    scale[c] = hi - lo;
                }
            }
            if !(scale[c] > 1e-12) {
                scale[c] = 1.0;
            }
        }
        Ok(Self { kind, offset, scale })
    }

    pub fn transform(&self, s: &MTSSample) -> Vec<f64> {
        let mut out = s.values.clone();
        for c in 0..CHANNELS {
            let (o, k) = (self.offset[c], self.scale[c]);
            for v in &mut out[c * s.len..(c + 1) * s.len] {
                *v = (*v - o) / k;
            }
        }
        out
    }
}

pub const FEATURE_BLOCKS: usize = 8;
pub const FEATURES_PER_CHANNEL: usize = 3 + FEATURE_BLOCKS;
pub const FEATURE_DIM: usize = CHANNELS * FEATURES_PER_CHANNEL;

/// Per channel: mean, standard deviation, mean absolute first difference and
/// the means of 8 equal-width time blocks.
pub fn series_features(values: &[f64], len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(FEATURE_DIM);
    for c in 0..CHANNELS {
        let xs = &values[c * len..(c + 1) * len];
        out.push(math::mean(xs));
        out.push(math::std_dev(xs));
        let mad = xs.windows(2).map(|w| math::abs(w[1] - w[0])).sum::<f64>() / (len - 1).max(1) as f64;
        out.push(mad);
        for b in 0..FEATURE_BLOCKS {
            let lo = b * len / FEATURE_BLOCKS;
            let hi = ((b + 1) * len / FEATURE_BLOCKS).max(lo + 1);
            out.push(math::mean(&xs[lo..hi]));
        }
    }
    out
}
