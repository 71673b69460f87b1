//! Data-layer hazards Y1-Y4 as batch transformations, and Y5-Y7 as directives
//! stamped on tasks for the pipeline and testbed layers.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{ComputationTask, Factor, HazardDirectives, HazardScenario, MTSBatch, Quality, ScenarioVerdict, CHANNELS, FOG_NODES};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, tag};

pub const DEFAULT_SNR_DB: f64 = 3.0;
/// Nonconforming shares for Y4 levels 0, 1, 2.
pub const CLASS_RATIOS: [f64; 3] = [0.40, 0.25, 0.10];
/// Target channel-marginal KL divergence for Y3 levels 1 and 2.
pub const SHIFT_KL_TARGETS: [f64; 2] = [0.1, 0.5];
/// Second mixture component mean as a fraction of the first.
pub const SHIFT_COMPONENT_RATIO: f64 = 0.5;
/// Within-component spread of the per-sample offset.
pub const SHIFT_SPREAD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContaminationMode {
    Constant,
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InjectionDetail {
    Identity,
    Contamination { channels: Vec<usize>, modes: Vec<ContaminationMode> },
    Noise { target_snr_db: f64, noise_std: [f64; CHANNELS], zero_variance_channels: Vec<usize> },
    Shift { target_kl: f64, kappa: f64, signs: [f64; CHANNELS], channel_std: [f64; CHANNELS] },
    Ratio { nonconforming: usize, size: usize, dropped: Vec<u64>, duplicated: Vec<(u64, u64)> },
    Directive { count: u8, nodes: Vec<u8> },
}

/// Audit record sufficient to replay an injection on the clean batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub factor: Factor,
    pub level: u8,
    pub seed: u64,
    pub detail: InjectionDetail,
}

impl InjectionReport {
    fn identity(factor: Factor, level: u8, seed: u64) -> Self {
        Self { factor, level, seed, detail: InjectionDetail::Identity }
    }

    pub fn is_identity(&self) -> bool {
        self.detail == InjectionDetail::Identity
    }
}

fn check_level(f: Factor, level: u8) -> Result<()> {
    if f.domain().contains(&level) {
        Ok(())
    } else {
        Err(Error::InvalidScenario { factor: f, level })
    }
}

/// Y1: replaces `level` channels with a constant hold or a linear trend of
/// +-2 standard deviations, in every sample.
pub fn inject_sensor_contamination(batch: &MTSBatch, level: u8, seed: u64) -> Result<(MTSBatch, InjectionReport)> {
    check_level(Factor::Y1, level)?;
    if level == 0 {
        return Ok((batch.clone(), InjectionReport::identity(Factor::Y1, 0, seed)));
    }
    let mut r = rng::rng_for(seed, &[tag::INJECT, 1]);
    let channels = rng::choose_distinct(&mut r, CHANNELS, usize::from(level));
    let modes: Vec<ContaminationMode> = channels
        .iter()
        .map(|_| match rng::below(&mut r, 3) {
            0 => ContaminationMode::Constant,
            1 => ContaminationMode::Increasing,
            _ => ContaminationMode::Decreasing,
        })
        .collect();
    let mut out = batch.clone();
    for s in &mut out.samples {
        let len = s.len;
        for (&c, &mode) in channels.iter().zip(&modes) {
            let ch = s.channel_mut(c);
            let x0 = ch[0];
            let sd = math::std_dev(ch);
            let rise = 2.0 * if sd > 0.0 { sd } else { 1.0 };
            let slope = match mode {
                ContaminationMode::Constant => 0.0,
                ContaminationMode::Increasing => rise,
                ContaminationMode::Decreasing => -rise,
            };
            for (t, v) in ch.iter_mut().enumerate() {
                *v = x0 + slope * t as f64 / (len - 1) as f64;
            }
        }
    }
    Ok((out, InjectionReport { factor: Factor::Y1, level, seed, detail: InjectionDetail::Contamination { channels, modes } }))
}

/// Pooled per-channel mean and population variance, accumulated in sample-id order.
pub fn channel_moments(batch: &MTSBatch) -> [(f64, f64); CHANNELS] {
    let order = batch.id_order();
    let mut out = [(0.0, 0.0); CHANNELS];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut n = 0usize;
        let mut sum = 0.0;
        for &i in &order {
            let ch = batch.samples[i].channel(c);
            sum += ch.iter().sum::<f64>();
            n += ch.len();
        }
        if n == 0 {
            continue;
        }
        let m = sum / n as f64;
        let mut sq = 0.0;
        for &i in &order {
            sq += batch.samples[i].channel(c).iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        *slot = (m, sq / n as f64);
    }
    out
}

/// Y2: additive white Gaussian noise per channel at `target_snr_db` relative
/// to the channel's pooled variance; each sample's noise is keyed by its id.
pub fn inject_noise_snr(batch: &MTSBatch, level: u8, target_snr_db: f64, seed: u64) -> Result<(MTSBatch, InjectionReport)> {
    check_level(Factor::Y2, level)?;
    if level == 0 {
        return Ok((batch.clone(), InjectionReport::identity(Factor::Y2, 0, seed)));
    }
    if !target_snr_db.is_finite() {
        return Err(Error::InvalidParameter(alloc::format!("target SNR {target_snr_db} dB")));
    }
    let moments = channel_moments(batch);
    let mut noise_std = [0.0; CHANNELS];
    let mut zero_variance_channels = Vec::new();
    for c in 0..CHANNELS {
        let var = moments[c].1;
        if var > 0.0 {
            noise_std[c] = math::sqrt(var / math::powf(10.0, target_snr_db / 10.0));
        } else {
            zero_variance_channels.push(c);
        }
    }
    let mut out = batch.clone();
    for s in &mut out.samples {
        let mut r = rng::rng_for(seed, &[tag::INJECT, 2, s.id]);
        for c in 0..CHANNELS {
            let k = noise_std[c];
            for v in s.channel_mut(c) {
                let e = rng::normal(&mut r);
                *v += k * e;
            }
        }
    }
    let detail = InjectionDetail::Noise { target_snr_db, noise_std, zero_variance_channels };
    Ok((out, InjectionReport { factor: Factor::Y2, level, seed, detail }))
}

/// Moment-matched KL of the shifted marginal from the clean one when each
/// sample is offset by `sign * s * sigma` with `s` drawn from the two-component
/// mixture `{kappa, rho * kappa} + tau * N(0, 1)`.
pub fn mixture_shift_kl(kappa: f64) -> f64 {
    let rho = SHIFT_COMPONENT_RATIO;
    let m = 0.5 * (1.0 + rho) * kappa;
    let half_gap = 0.5 * (1.0 - rho) * kappa;
    let v = SHIFT_SPREAD * SHIFT_SPREAD + half_gap * half_gap;
    0.5 * (v - math::ln(1.0 + v) + m * m)
}

/// Mixture scale whose moment-matched KL equals `target` (bisection).
pub fn calibrate_shift(target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mixture_shift_kl(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Y3: per-sample channel offsets from a two-component Gaussian mixture,
/// calibrated so the channel-marginal KL is about 0.1 (level 1) or 0.5 (level 2).
pub fn inject_distribution_shift(batch: &MTSBatch, level: u8, seed: u64) -> Result<(MTSBatch, InjectionReport)> {
    check_level(Factor::Y3, level)?;
    if level == 0 {
        return Ok((batch.clone(), InjectionReport::identity(Factor::Y3, 0, seed)));
    }
    let target_kl = SHIFT_KL_TARGETS[usize::from(level) - 1];
    let kappa = calibrate_shift(target_kl);
    let moments = channel_moments(batch);
    let mut channel_std = [0.0; CHANNELS];
    let mut signs = [1.0; CHANNELS];
    let mut r = rng::rng_for(seed, &[tag::INJECT, 3]);
    for c in 0..CHANNELS {
        channel_std[c] = math::sqrt(moments[c].1);
        if rng::below(&mut r, 2) == 1 {
            signs[c] = -1.0;
        }
    }
    let mut out = batch.clone();
    for s in &mut out.samples {
        let mut r = rng::rng_for(seed, &[tag::INJECT, 3, s.id]);
        for c in 0..CHANNELS {
            let centre = if rng::below(&mut r, 2) == 0 { kappa } else { SHIFT_COMPONENT_RATIO * kappa };
            let offset = signs[c] * (centre + SHIFT_SPREAD * rng::normal(&mut r)) * channel_std[c];
            s.channel_mut(c).iter_mut().for_each(|v| *v += offset);
        }
    }
    let detail = InjectionDetail::Shift { target_kl, kappa, signs, channel_std };
    Ok((out, InjectionReport { factor: Factor::Y3, level, seed, detail }))
}

/// Gaussian-approximated KL(shifted || clean) of one channel's pooled values.
pub fn marginal_kl(clean: &MTSBatch, shifted: &MTSBatch, channel: usize) -> f64 {
    let (m0, v0) = channel_moments(clean)[channel];
    let (m1, v1) = channel_moments(shifted)[channel];
    math::gaussian_kl(m1, v1, m0, v0)
}

/// Y4: drops surplus samples of the over-represented class and duplicates
/// (under fresh ids) samples of the other until the nonconforming count is
/// exactly `round(ratio * size)`.
pub fn enforce_class_ratio(batch: &MTSBatch, level: u8, seed: u64) -> Result<(MTSBatch, InjectionReport)> {
    check_level(Factor::Y4, level)?;
    if level == 0 {
        return Ok((batch.clone(), InjectionReport::identity(Factor::Y4, 0, seed)));
    }
    let (out, dropped, duplicated) = resample_to_ratio(batch, CLASS_RATIOS[usize::from(level)], seed)?;
    let detail = InjectionDetail::Ratio { nonconforming: out.nonconforming_count(), size: out.len(), dropped, duplicated };
    Ok((out, InjectionReport { factor: Factor::Y4, level, seed, detail }))
}

#[allow(clippy::type_complexity)]
fn resample_to_ratio(batch: &MTSBatch, ratio: f64, seed: u64) -> Result<(MTSBatch, Vec<u64>, Vec<(u64, u64)>)> {
    let n = batch.len();
    let want = math::round(ratio * n as f64) as usize;
    let order = batch.id_order();
    let bad: Vec<usize> = order.iter().copied().filter(|&i| batch.samples[i].label == Quality::Nonconforming).collect();
    let good: Vec<usize> = order.iter().copied().filter(|&i| batch.samples[i].label == Quality::Conforming).collect();
    let (surplus, donors) = if bad.len() > want { (&bad, &good) } else { (&good, &bad) };
    let excess = bad.len().abs_diff(want);
    if excess > 0 && donors.is_empty() {
        return Err(Error::UnreachableRatio { nonconforming: want, size: n, attempts: 0 });
    }
    let mut r = rng::rng_for(seed, &[tag::INJECT, 4]);
    let drop_idx: Vec<usize> = rng::choose_distinct(&mut r, surplus.len(), excess).into_iter().map(|k| surplus[k]).collect();
    let mut keep = vec![true; n];
    drop_idx.iter().for_each(|&i| keep[i] = false);
    let mut samples: Vec<_> = batch.samples.iter().zip(&keep).filter(|(_, &k)| k).map(|(s, _)| s.clone()).collect();
    let mut duplicated = Vec::with_capacity(excess);
    for j in 0..excess {
        let src = &batch.samples[donors[rng::below(&mut r, donors.len())]];
        let mut copy = src.clone();
        copy.id = rng::derive(seed, &[tag::INJECT, 4, src.id, j as u64]);
        duplicated.push((src.id, copy.id));
        samples.push(copy);
    }
    let dropped = drop_idx.iter().map(|&i| batch.samples[i].id).collect();
    let mut out = MTSBatch::from_samples(samples, batch.machine_id);
    out.nonconforming_ratio = ratio;
    Ok((out, dropped, duplicated))
}

/// Fog nodes disabled (Y6) and channels disrupted (Y7) for a scenario: disjoint
/// seeded subsets of the five fog nodes, shared by every task of the scenario.
pub fn cyber_directives(scenario: &HazardScenario, scenario_seed: u64) -> (Vec<u8>, Vec<u8>) {
    let y6 = usize::from(scenario.level(Factor::Y6));
    let y7 = usize::from(scenario.level(Factor::Y7));
    let mut r = rng::rng_for(scenario_seed, &[tag::NODES]);
    let picks = rng::choose_distinct(&mut r, usize::from(FOG_NODES), y6 + y7);
    let to_ids = |xs: &[usize]| {
        let mut v: Vec<u8> = xs.iter().map(|&k| k as u8 + 1).collect();
        v.sort_unstable();
        v
    };
    (to_ids(&picks[..y6]), to_ids(&picks[y6..]))
}

/// Applies Y1 -> Y2 -> Y3 -> Y4 to the task batch and stamps Y5-Y7 directives
/// when `hazard_flag` is set; otherwise leaves the task at all-zero levels.
pub fn apply_scenario_to_task(task: &mut ComputationTask, scenario: &HazardScenario, hazard_flag: bool, scenario_seed: u64) -> Result<()> {
    if let ScenarioVerdict::Invalid { factor, level } = scenario.validate() {
        return Err(Error::InvalidScenario { factor, level });
    }
    task.injection.clear();
    if !hazard_flag {
        task.scenario = HazardScenario::NORMAL;
        task.hazard_flag = false;
        task.directives = HazardDirectives::default();
        return Ok(());
    }
    let mut batch = task.batch.take().ok_or(Error::Empty("task batch"))?;
    let seed_for = |f: Factor| rng::derive(scenario_seed, &[tag::INJECT, task.task_id, f.index() as u64]);
    let steps: [(Factor, fn(&MTSBatch, u8, u64) -> Result<(MTSBatch, InjectionReport)>); 4] = [
        (Factor::Y1, inject_sensor_contamination),
        (Factor::Y2, |b, l, s| inject_noise_snr(b, l, DEFAULT_SNR_DB, s)),
        (Factor::Y3, inject_distribution_shift),
        (Factor::Y4, enforce_class_ratio),
    ];
    for (f, inject) in steps {
        let (next, report) = inject(&batch, scenario.level(f), seed_for(f))?;
        batch = next;
        task.injection.push(report);
    }
    let (disabled, disrupted) = cyber_directives(scenario, scenario_seed);
    task.directives = HazardDirectives {
        singular_pipelines: scenario.level(Factor::Y5),
        disabled_nodes: disabled.clone(),
        disrupted_channels: disrupted.clone(),
        singular_class: None,
    };
    for (f, nodes) in [(Factor::Y5, Vec::new()), (Factor::Y6, disabled), (Factor::Y7, disrupted)] {
        let count = scenario.level(f);
        task.injection.push(InjectionReport { factor: f, level: count, seed: scenario_seed, detail: InjectionDetail::Directive { count, nodes } });
    }
    task.batch = Some(batch);
    task.scenario = *scenario;
    task.hazard_flag = true;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::MTSSample;

    pub(crate) fn toy_batch(n: usize, len: usize, bad: usize, seed: u64) -> MTSBatch {
        let mut r = rng::rng_from(seed);
        let samples = (0..n)
            .map(|i| {
                let label = if i < bad { Quality::Nonconforming } else { Quality::Conforming };
                let values = (0..CHANNELS * len).map(|k| rng::normal(&mut r) + (k / len) as f64).collect();
                MTSSample::new(1000 + i as u64, len, values, label).unwrap()
            })
            .collect();
        MTSBatch::from_samples(samples, 1)
    }

    #[test]
    fn level_zero_is_bitwise_identity() {
        let b = toy_batch(20, 16, 8, 1);
        assert_eq!(inject_sensor_contamination(&b, 0, 5).unwrap().0, b);
        assert_eq!(inject_noise_snr(&b, 0, 3.0, 5).unwrap().0, b);
        assert_eq!(inject_distribution_shift(&b, 0, 5).unwrap().0, b);
        assert_eq!(enforce_class_ratio(&b, 0, 5).unwrap().0, b);
    }

    #[test]
    fn y2_level_one_rejected() {
        let b = toy_batch(4, 16, 2, 1);
        assert!(inject_noise_snr(&b, 1, 3.0, 5).is_err());
        assert!(inject_sensor_contamination(&b, 3, 5).is_err());
    }

    #[test]
    fn contamination_counts_channels() {
        let b = toy_batch(10, 32, 4, 2);
        for seed in 0..10 {
            let (_, rep) = inject_sensor_contamination(&b, 2, seed).unwrap();
            match rep.detail {
                InjectionDetail::Contamination { channels, .. } => {
                    assert_eq!(channels.len(), 2);
                    assert_ne!(channels[0], channels[1]);
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn constant_mode_flattens_channel() {
        let b = toy_batch(10, 32, 4, 2);
        let seed = (0..100)
            .find(|&s| {
                matches!(inject_sensor_contamination(&b, 1, s).unwrap().1.detail,
                    InjectionDetail::Contamination { ref modes, .. } if modes[0] == ContaminationMode::Constant)
            })
            .unwrap();
        let (out, _) = inject_sensor_contamination(&b, 1, seed).unwrap();
        for s in &out.samples {
            let flat = (0..CHANNELS).filter(|&c| s.channel(c).iter().all(|&v| v == s.channel(c)[0])).count();
            assert_eq!(flat, 1);
        }
    }

    #[test]
    fn kl_calibration_hits_targets() {
        for target in SHIFT_KL_TARGETS {
            assert!((mixture_shift_kl(calibrate_shift(target)) - target).abs() < 1e-12);
        }
    }

    #[test]
    fn ratio_enforcement_is_exact() {
        let b = toy_batch(100, 8, 40, 3);
        for (level, want) in [(1u8, 25usize), (2, 10)] {
            let (out, _) = enforce_class_ratio(&b, level, 7).unwrap();
            assert_eq!(out.len(), 100);
            assert_eq!(out.nonconforming_count(), want);
        }
        let none_bad = toy_batch(10, 8, 0, 3);
        assert!(matches!(enforce_class_ratio(&none_bad, 1, 7), Err(Error::UnreachableRatio { .. })));
    }

    #[test]
    fn scenario_composition_reports_each_factor() {
        let mut task = ComputationTask::new(3, 0, 1);
        task.batch = Some(toy_batch(100, 16, 40, 4));
        let s = HazardScenario::new([1, 0, 0, 2, 0, 0, 0]);
        apply_scenario_to_task(&mut task, &s, true, 99).unwrap();
        assert_eq!(task.injection.len(), 7);
        assert!(matches!(task.injection[0].detail, InjectionDetail::Contamination { ref channels, .. } if channels.len() == 1));
        assert!(task.injection[1].is_identity() && task.injection[2].is_identity());
        assert_eq!(task.batch.as_ref().unwrap().nonconforming_count(), 10);
        assert!(task.directives.is_clear());
    }

    #[test]
    fn normal_scenario_leaves_batch_alone() {
        let mut task = ComputationTask::new(3, 0, 1);
        let b = toy_batch(10, 16, 4, 4);
        task.batch = Some(b.clone());
        apply_scenario_to_task(&mut task, &HazardScenario::NORMAL, true, 1).unwrap();
        assert_eq!(task.batch.as_ref().unwrap(), &b);
        assert!(task.injection.iter().all(|r| r.level == 0));
    }

    #[test]
    fn cyber_node_sets_are_disjoint() {
        let s = HazardScenario::new([0, 0, 0, 0, 0, 2, 2]);
        for seed in 0..50 {
            let (a, b) = cyber_directives(&s, seed);
            assert_eq!((a.len(), b.len()), (2, 2));
            assert!(a.iter().all(|n| !b.contains(n) && (1..=5).contains(n)));
        }
    }
}
