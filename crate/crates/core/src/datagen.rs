//! Synthetic five-machine corpus: a labeled base set, per-machine ground-truth
//! labelers and augmentation-based sample expansion.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{MTSBatch, MTSSample, Quality, CHANNELS, MACHINES};
use crate::error::{Error, Result};
use crate::math;
use crate::pipeline::TrainedPipeline;
use crate::rng::{self, tag};

pub const DEFAULT_SERIES_LEN: usize = 200;
pub const BASE_CORPUS_SIZE: usize = 95;

/// Shape of the class-dependent structure in the six informative channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub nonconforming_share: f64,
    /// Mean offset of channels 0-2 for nonconforming samples.
    pub mean_shift: f64,
    /// Between-sample spread of each channel's level.
    pub level_spread: f64,
    /// Oscillation cycles per series in channels 3-4, by class.
    pub cycles_conforming: f64,
    pub cycles_nonconforming: f64,
    /// Total drift over the series in channel 5 for nonconforming samples.
    pub drift: f64,
    pub noise: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            nonconforming_share: 0.4,
            mean_shift: 0.25,
            level_spread: 0.5,
            cycles_conforming: 3.0,
            cycles_nonconforming: 3.5,
            drift: 0.5,
            noise: 1.0,
        }
    }
}

fn ar1(r: &mut impl Rng, len: usize, phi: f64, sd: f64, out: &mut [f64]) {
    let innov = sd * math::sqrt(1.0 - phi * phi);
    let mut e = sd * rng::normal(r);
    for v in out.iter_mut().take(len) {
        *v += e;
        e = phi * e + innov * rng::normal(r);
    }
}

fn generate_one(id: u64, len: usize, label: Quality, p: &GeneratorParams, r: &mut impl Rng) -> Result<MTSSample> {
    let bad = label == Quality::Nonconforming;
    let severity = if bad { 0.6 + 0.8 * rng::uniform(r) } else { 0.0 };
    let mut values = vec![0.0; CHANNELS * len];
    for c in 0..CHANNELS {
        let ch = &mut values[c * len..(c + 1) * len];
        let level = p.level_spread * rng::normal(r);
        ch.iter_mut().for_each(|v| *v = level);
        match c {
            0..=2 => {
                ch.iter_mut().for_each(|v| *v += p.mean_shift * severity);
                ar1(r, len, 0.5, p.noise, ch);
            }
            3 | 4 => {
                let cycles = if bad { p.cycles_nonconforming } else { p.cycles_conforming } + rng::uniform(r) - 0.5;
                let amp = 0.8 + 0.4 * rng::uniform(r);
                let phase = 2.0 * PI * rng::uniform(r);
                for (t, v) in ch.iter_mut().enumerate() {
                    *v += amp * math::sin(2.0 * PI * cycles * t as f64 / len as f64 + phase);
                }
                ar1(r, len, 0.3, 0.5 * p.noise, ch);
            }
            5 => {
                let slope = p.drift * severity + 0.3 * rng::normal(r);
                for (t, v) in ch.iter_mut().enumerate() {
                    *v += slope * (t as f64 / (len - 1) as f64 - 0.5);
                }
                ar1(r, len, 0.5, 0.7 * p.noise, ch);
            }
            _ => ar1(r, len, 0.7, p.noise, ch),
        }
    }
    MTSSample::new(id, len, values, label)
}

pub fn generate_base_dataset(seed: u64, n: usize, len: usize) -> Result<Vec<MTSSample>> {
    generate_base_dataset_with(seed, n, len, &GeneratorParams::default())
}

pub fn generate_base_dataset_with(seed: u64, n: usize, len: usize, params: &GeneratorParams) -> Result<Vec<MTSSample>> {
    if n < 10 || len < 32 {
        return Err(Error::InvalidParameter(alloc::format!("base corpus needs n >= 10 and T >= 32, got n = {n}, T = {len}")));
    }
    let mut r = rng::rng_for(seed, &[tag::BASE_DATA]);
    (0..n)
        .map(|i| {
            let label = if rng::uniform(&mut r) < params.nonconforming_share { Quality::Nonconforming } else { Quality::Conforming };
            generate_one(i as u64, len, label, params, &mut r)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentationKind {
    None,
    TimeWarp,
    Pooling,
    Convolve,
    Jitter,
    Scaling,
}

/// `strength` is the warp displacement (timewarp), noise scale (jitter) or
/// scale-factor spread (scaling); `width` is the pool or kernel width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationOp {
    pub kind: AugmentationKind,
    pub strength: f64,
    pub width: usize,
}

impl AugmentationOp {
    pub const NONE: AugmentationOp = AugmentationOp { kind: AugmentationKind::None, strength: 0.0, width: 0 };

    pub fn jitter(scale: f64) -> Self {
        Self { kind: AugmentationKind::Jitter, strength: scale, width: 0 }
    }

    pub fn scaling(spread: f64) -> Self {
        Self { kind: AugmentationKind::Scaling, strength: spread, width: 0 }
    }

    pub fn timewarp(strength: f64) -> Self {
        Self { kind: AugmentationKind::TimeWarp, strength, width: 0 }
    }

    pub fn pooling(width: usize) -> Self {
        Self { kind: AugmentationKind::Pooling, strength: 0.0, width }
    }

    pub fn convolve(width: usize) -> Self {
        Self { kind: AugmentationKind::Convolve, strength: 0.0, width }
    }

    /// Parameters used when a pipeline config names only the kind.
    pub fn default_for(kind: AugmentationKind) -> Self {
        match kind {
            AugmentationKind::None => Self::NONE,
            AugmentationKind::TimeWarp => Self::timewarp(0.3),
            AugmentationKind::Pooling => Self::pooling(2),
            AugmentationKind::Convolve => Self::convolve(3),
            AugmentationKind::Jitter => Self::jitter(0.1),
            AugmentationKind::Scaling => Self::scaling(0.1),
        }
    }

    /// A random op for expanding machine corpora.
    pub fn random(r: &mut impl Rng) -> Self {
        match rng::below(r, 6) {
            0 => Self::NONE,
            1 => Self::timewarp(0.3 + 0.6 * rng::uniform(r)),
            2 => Self::pooling([2, 4, 5][rng::below(r, 3)]),
            3 => Self::convolve([3, 5, 7][rng::below(r, 3)]),
            4 => Self::jitter(0.3 + 0.7 * rng::uniform(r)),
            _ => Self::scaling(0.1 + 0.3 * rng::uniform(r)),
        }
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(alloc::format!("{:?}: {msg}", self.kind)));
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return bad("strength must be finite and nonnegative");
        }
        match self.kind {
            AugmentationKind::Pooling | AugmentationKind::Convolve if self.width == 0 || self.width > len => {
                bad("width must lie in 1..=T")
            }
            AugmentationKind::TimeWarp if self.strength > 1.0 => bad("warp strength above 1 breaks monotonicity"),
            _ => Ok(()),
        }
    }
}

const WARP_KNOTS: usize = 4;

/// Non-overlapping average pooling; a trailing partial window is dropped.
pub fn pool_channel(xs: &[f64], width: usize) -> Vec<f64> {
    xs.chunks_exact(width).map(math::mean).collect()
}

fn convolve_channel(xs: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    let n = xs.len() as isize;
    (0..n)
        .map(|t| {
            let lo = t - half as isize;
            (0..width as isize).map(|k| xs[(lo + k).clamp(0, n - 1) as usize]).sum::<f64>() / width as f64
        })
        .collect()
}

/// Augmented copy of channel-major `values`; the output has the same channel
/// count and length.
pub fn apply_augmentation(values: &[f64], len: usize, op: &AugmentationOp, r: &mut impl Rng) -> Result<Vec<f64>> {
    op.validate(len)?;
    let mut out = values.to_vec();
    match op.kind {
        AugmentationKind::None => {}
        AugmentationKind::Jitter => {
            if op.strength > 0.0 {
                out.iter_mut().for_each(|v| *v += op.strength * rng::normal(r));
            }
        }
        AugmentationKind::Scaling => {
            for ch in out.chunks_exact_mut(len) {
                let k = 1.0 + op.strength * rng::normal(r);
                ch.iter_mut().for_each(|v| *v *= k);
            }
        }
        AugmentationKind::Pooling => {
            for ch in out.chunks_exact_mut(len) {
                let pooled = pool_channel(ch, op.width);
                ch.copy_from_slice(&math::resample_linear(&pooled, len));
            }
        }
        AugmentationKind::Convolve => {
            for ch in out.chunks_exact_mut(len) {
                let smooth = convolve_channel(ch, op.width);
                ch.copy_from_slice(&smooth);
            }
        }
        AugmentationKind::TimeWarp => {
            // piecewise-linear monotone map of [0, 1] onto itself
            let step = 1.0 / (WARP_KNOTS + 1) as f64;
            let mut knots = vec![(0.0, 0.0)];
            for k in 1..=WARP_KNOTS {
                let x = k as f64 * step;
                knots.push((x, x + op.strength * 0.5 * step * (2.0 * rng::uniform(r) - 1.0)));
            }
            knots.push((1.0, 1.0));
            let warp = |u: f64| {
                let i = ((u / step) as usize).min(WARP_KNOTS);
                let (x0, y0) = knots[i];
                let (x1, y1) = knots[i + 1];
                y0 + (y1 - y0) * (u - x0) / (x1 - x0)
            };
            let last = (len - 1) as f64;
            for (dst, src) in out.chunks_exact_mut(len).zip(values.chunks_exact(len)) {
                for (t, v) in dst.iter_mut().enumerate() {
                    let pos = (warp(t as f64 / last) * last).clamp(0.0, last);
                    let lo = math::floor(pos) as usize;
                    let hi = (lo + 1).min(len - 1);
                    let frac = pos - lo as f64;
                    *v = src[lo] * (1.0 - frac) + src[hi] * frac;
                }
            }
        }
    }
    Ok(out)
}

/// A machine's labeler: the baseline pipeline with its output layer perturbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthModel {
    pub machine_id: u8,
    pub pipeline: TrainedPipeline,
    pub perturbation_seed: u64,
    pub sigma: f64,
}

impl GroundTruthModel {
    pub fn label(&self, s: &MTSSample) -> Quality {
        self.pipeline.predict(s)
    }

    pub fn final_layer_vector(&self) -> Vec<f64> {
        self.pipeline.final_layer_vector()
    }
}

/// Five machine labelers whose output layers carry seeded Gaussian noise of
/// scale `sigma * std(final-layer weights)`.
pub fn derive_ground_truth_models(baseline: &TrainedPipeline, sigma: f64, seed: u64) -> Result<Vec<GroundTruthModel>> {
    if baseline.fit.epochs_run == 0 {
        return Err(Error::UntrainedBaseline);
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(alloc::format!("sigma_gt = {sigma}")));
    }
    let scale = sigma * math::std_dev(baseline.classifier.final_layer().weights.data());
    (1..=MACHINES as u8)
        .map(|m| {
            let perturbation_seed = rng::derive(seed, &[tag::GROUND_TRUTH, u64::from(m)]);
            let mut r = rng::rng_from(perturbation_seed);
            let mut pipeline = baseline.clone();
            pipeline.machine_id = m;
            let last = pipeline.classifier.final_layer_mut();
            if scale > 0.0 {
                last.weights.data_mut().iter_mut().for_each(|w| *w += scale * rng::normal(&mut r));
                last.bias.data_mut().iter_mut().for_each(|b| *b += scale * rng::normal(&mut r));
            }
            Ok(GroundTruthModel { machine_id: m, pipeline, perturbation_seed, sigma })
        })
        .collect()
}

/// Augments `s` and labels the result with the machine's ground-truth model.
pub fn augment_sample(s: &MTSSample, op: &AugmentationOp, gt: &GroundTruthModel, seed: u64) -> Result<MTSSample> {
    let mut r = rng::rng_for(seed, &[tag::AUGMENT, s.id]);
    let values = apply_augmentation(&s.values, s.len, op, &mut r)?;
    let mut out = MTSSample::new(s.id, s.len, values, Quality::Conforming)?;
    out.label = gt.label(&out);
    Ok(out)
}

/// Clean data generator for one machine: random augmentations of the base
/// corpus labeled by the machine's ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSource {
    pub machine_id: u8,
    pub base: Vec<MTSSample>,
    pub ground_truth: GroundTruthModel,
}

impl MachineSource {
    /// The `index`-th sample of the stream keyed by `seed`; a pure function.
    pub fn draw(&self, seed: u64, index: u64) -> Result<MTSSample> {
        let mut r = rng::rng_for(seed, &[tag::AUGMENT, u64::from(self.machine_id), index]);
        let src = &self.base[rng::below(&mut r, self.base.len())];
        let op = AugmentationOp::random(&mut r);
        let values = apply_augmentation(&src.values, src.len, &op, &mut r)?;
        let mut s = MTSSample::new(rng::derive(seed, &[tag::BATCH, index]), src.len, values, Quality::Conforming)?;
        s.label = self.ground_truth.label(&s);
        Ok(s)
    }

    pub fn corpus(&self, n: usize, seed: u64) -> Result<Vec<MTSSample>> {
        let seed = rng::derive(seed, &[tag::MACHINE_CORPUS, u64::from(self.machine_id)]);
        (0..n as u64).map(|i| self.draw(seed, i)).collect()
    }
}

/// Rejection-samples a batch with exactly `round(ratio * size)` nonconforming
/// samples, keeping accepted draws in stream order.
pub fn generate_machine_batch(source: &MachineSource, size: usize, ratio: f64, seed: u64) -> Result<MTSBatch> {
    if size == 0 || !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidParameter(alloc::format!("batch size {size}, ratio {ratio}")));
    }
    let want_bad = math::round(ratio * size as f64) as usize;
    let mut need = [size - want_bad, want_bad];
    let max_attempts = 50 * size;
    let seed = rng::derive(seed, &[tag::BATCH, u64::from(source.machine_id)]);
    let mut samples = Vec::with_capacity(size);
    let mut attempts = 0;
    while samples.len() < size {
        if attempts == max_attempts {
            return Err(Error::UnreachableRatio { nonconforming: want_bad, size, attempts });
        }
        let s = source.draw(seed, attempts as u64)?;
        attempts += 1;
        let k = s.label.as_class();
        if need[k] > 0 {
            need[k] -= 1;
            samples.push(s);
        }
    }
    let mut batch = MTSBatch::from_samples(samples, source.machine_id);
    batch.nonconforming_ratio = ratio;
    Ok(batch)
}
