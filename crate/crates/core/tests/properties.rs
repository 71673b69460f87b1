use proptest::prelude::*;

use mii_resil_core::datagen::{apply_augmentation, generate_base_dataset, AugmentationKind, AugmentationOp};
use mii_resil_core::diagnosis::MmslaModel;
use mii_resil_core::domain::{label_from_scenario, Factor, HazardScenario, MTSBatch, CHANNELS, FACTORS};
use mii_resil_core::hazard::{enforce_class_ratio, inject_distribution_shift, inject_noise_snr, inject_sensor_contamination, DEFAULT_SNR_DB};
use mii_resil_core::math;
use mii_resil_core::mitigation::select_similar_machine;
use mii_resil_core::nn::{kl_divergence_diag_gaussian, GaussianLatent};
use mii_resil_core::pipeline::{apply_singularity, performance_from_predictions, select_top, Confusion};
use mii_resil_core::resilience::{compute_metrics, detect_episode, EpisodeBounds, PerformanceCurve};
use mii_resil_core::rng;

fn small_batch(seed: u64) -> MTSBatch {
    MTSBatch::from_samples(generate_base_dataset(seed, 12, 32).unwrap(), 1)
}

fn scenario_strategy() -> impl Strategy<Value = HazardScenario> {
    (0u8..3, prop::bool::ANY, 0u8..3, 0u8..3, 0u8..3, 0u8..3, 0u8..3)
        .prop_map(|(a, b, c, d, e, f, g)| HazardScenario::new([a, if b { 2 } else { 0 }, c, d, e, f, g]))
}

/// Step curve: values in (0, 1], increasing times with gaps of 1..100.
fn curve_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((1.0f64..100.0, 0.01f64..1.0), 3..12).prop_map(|v| {
        let mut t = 0.0;
        v.into_iter()
            .map(|(dt, p)| {
                t += dt;
                (t, p)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn raising_a_level_never_clears_a_flag(s in scenario_strategy(), j in 0usize..FACTORS) {
        let f = Factor::ALL[j];
        let before = label_from_scenario(&s).unwrap();
        for &l in f.domain().iter().filter(|&&l| l > s.level(f)) {
            let after = label_from_scenario(&s.with(f, l)).unwrap();
            for k in 0..FACTORS {
                prop_assert!(!before.present[k] || after.present[k]);
            }
        }
    }

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let p = math::softmax(&z);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn kl_is_nonnegative(mean in prop::collection::vec(-3.0f64..3.0, 1..8), lv in prop::collection::vec(-3.0f64..3.0, 8)) {
        let (q, _) = GaussianLatent::from_raw(&mean, &lv[..mean.len()]);
        let kl = kl_divergence_diag_gaussian(&q);
        prop_assert!(kl >= 0.0);
        let zero = vec![0.0; mean.len()];
        let (q0, _) = GaussianLatent::from_raw(&zero, &zero);
        prop_assert_eq!(kl_divergence_diag_gaussian(&q0), 0.0);
    }

    #[test]
    fn augmentation_keeps_shape(kind in 0usize..5, seed in any::<u64>()) {
        let kinds = [AugmentationKind::Jitter, AugmentationKind::Scaling, AugmentationKind::TimeWarp, AugmentationKind::Pooling, AugmentationKind::Convolve];
        let s = &generate_base_dataset(3, 10, 32).unwrap()[0];
        let op = AugmentationOp::default_for(kinds[kind]);
        let out = apply_augmentation(&s.values, s.len, &op, &mut rng::rng_from(seed)).unwrap();
        prop_assert_eq!(out.len(), CHANNELS * s.len);
        prop_assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn injections_commute_with_sample_order(data_seed in 0u64..20, inj_seed in any::<u64>(), perm_seed in any::<u64>(), level in 1u8..3) {
        let clean = small_batch(data_seed);
        let mut shuffled = clean.clone();
        rng::shuffle(&mut rng::rng_from(perm_seed), &mut shuffled.samples);
        let by_id = |b: &MTSBatch| {
            let mut v = b.samples.clone();
            v.sort_by_key(|s| s.id);
            v
        };
        let y2 = if level == 1 { 2 } else { level };
        let runs: [fn(&MTSBatch, u8, u64) -> MTSBatch; 4] = [
            |b, l, s| inject_sensor_contamination(b, l, s).unwrap().0,
            |b, l, s| inject_noise_snr(b, l, DEFAULT_SNR_DB, s).unwrap().0,
            |b, l, s| inject_distribution_shift(b, l, s).unwrap().0,
            |b, l, s| enforce_class_ratio(b, l, s).unwrap().0,
        ];
        for (k, run) in runs.iter().enumerate() {
            let l = if k == 1 { y2 } else { level };
            prop_assert_eq!(by_id(&run(&clean, l, inj_seed)), by_id(&run(&shuffled, l, inj_seed)), "factor Y{}", k + 1);
        }
    }

    #[test]
    fn level_zero_is_identity(data_seed in 0u64..20, seed in any::<u64>()) {
        let b = small_batch(data_seed);
        prop_assert_eq!(&inject_sensor_contamination(&b, 0, seed).unwrap().0, &b);
        prop_assert_eq!(&inject_noise_snr(&b, 0, DEFAULT_SNR_DB, seed).unwrap().0, &b);
        prop_assert_eq!(&inject_distribution_shift(&b, 0, seed).unwrap().0, &b);
        prop_assert_eq!(&enforce_class_ratio(&b, 0, seed).unwrap().0, &b);
    }

    #[test]
    fn f1_matches_confusion(truth in prop::collection::vec(0usize..2, 5..60), seed in any::<u64>()) {
        let mut r = rng::rng_from(seed);
        let preds: Vec<Vec<usize>> = (0..3).map(|_| truth.iter().map(|_| rng::below(&mut r, 2)).collect()).collect();
        let (pv, _) = performance_from_predictions(&preds, &truth);
        for (k, p) in preds.iter().enumerate() {
            let c = Confusion::from_predictions(p, &truth, 1);
            let f1 = pv.f1(k);
            prop_assert!((0.0..=1.0).contains(&f1));
            let (prec, rec) = (c.precision().value, c.recall());
            let hm = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
            prop_assert!((f1 - hm).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_accuracy_is_class_share(truth in prop::collection::vec(0usize..2, 5..60), class in 0usize..2, seed in any::<u64>()) {
        let preds = vec![truth.clone(); 3];
        let out = apply_singularity(preds, 3, Some(class), 10.0, seed).unwrap();
        let (pv, _) = performance_from_predictions(&out.predictions, &truth);
        let share = truth.iter().filter(|&&t| t == class).count() as f64 / truth.len() as f64;
        for k in 0..3 {
            prop_assert_eq!(pv.accuracy(k), share);
        }
        prop_assert_eq!(out.compute_time, 20.0);
    }

    #[test]
    fn ranking_ignores_input_order(scores in prop::collection::vec(0u8..10, 3..20), seed in any::<u64>()) {
        let base: Vec<(usize, f64)> = scores.iter().enumerate().map(|(i, &s)| (i, f64::from(s) / 10.0)).collect();
        let mut shuffled = base.clone();
        rng::shuffle(&mut rng::rng_from(seed), &mut shuffled);
        prop_assert_eq!(select_top(&base, 3).unwrap(), select_top(&shuffled, 3).unwrap());
    }

    #[test]
    fn deepset_ignores_row_order(n in 1usize..40, seed in any::<u64>()) {
        let model = MmslaModel::new(5, &mut rng::rng_from(7)).unwrap();
        let mut r = rng::rng_from(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..16).map(|_| rng::normal(&mut r)).collect()).collect();
        let reference = model.aggregate(&rows).unwrap();
        let mut perm = rows.clone();
        rng::shuffle(&mut r, &mut perm);
        let again = model.aggregate(&perm).unwrap();
        prop_assert!(reference.iter().zip(&again).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn attention_gates_are_distributions(seed in any::<u64>()) {
        let model = MmslaModel::new(5, &mut rng::rng_from(seed)).unwrap();
        let mut r = rng::rng_from(seed ^ 1);
        let z: Vec<f64> = (0..32).map(|_| 3.0 * rng::normal(&mut r)).collect();
        for h in &model.heads {
            let (_, g) = h.gate(&z);
            prop_assert!(g.iter().all(|&v| v >= 0.0));
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn step_integral_is_exact(pts in curve_strategy()) {
        let curve = PerformanceCurve::new(pts.clone()).unwrap();
        let (a, b) = (pts[0].0, pts[pts.len() - 1].0 + 50.0);
        let closed: f64 = pts
            .iter()
            .enumerate()
            .map(|(i, &(t, p))| p * (pts.get(i + 1).map_or(b, |q| q.0) - t))
            .sum();
        prop_assert!((curve.integrate(a, b) - closed).abs() <= 1e-9 * closed.abs().max(1.0));
    }

    #[test]
    fn pr_ignores_time_shift_and_fd_ignores_scaling(pts in curve_strategy(), shift in -1e4f64..1e4, scale in 0.1f64..1.0) {
        let p_s = 0.5;
        let curve = PerformanceCurve::new(pts.clone()).unwrap();
        if let Some(b) = detect_episode(&curve, p_s, &[]).filter(|b| b.t3.is_some()) {
            let m = compute_metrics(&b, &curve, p_s, 400.0).unwrap();
            let moved: Vec<(f64, f64)> = pts.iter().map(|&(t, p)| (t + shift, p)).collect();
            let mc = PerformanceCurve::new(moved).unwrap();
            let mb = detect_episode(&mc, p_s, &[]).unwrap();
            let mm = compute_metrics(&mb, &mc, p_s, 400.0).unwrap();
            prop_assert!((m.pr.unwrap() - mm.pr.unwrap()).abs() < 1e-9);
            let scaled: Vec<(f64, f64)> = pts.iter().map(|&(t, p)| (t, p * scale)).collect();
            let sc = PerformanceCurve::new(scaled).unwrap();
            let sb = detect_episode(&sc, p_s * scale, &[]).unwrap();
            let sm = compute_metrics(&sb, &sc, p_s * scale, 400.0).unwrap();
            prop_assert_eq!(m.fd, sm.fd);
        }
    }

    #[test]
    fn equal_windows_give_unit_rr(level in 0.76f64..1.0, low in 0.0f64..0.74, dip in 10.0f64..500.0) {
        let pts = vec![(0.0, level), (1000.0, low), (1000.0 + dip, level)];
        let curve = PerformanceCurve::new(pts).unwrap();
        let b = detect_episode(&curve, 0.75, &[]).unwrap();
        let m = compute_metrics(&b, &curve, 0.75, 400.0).unwrap();
        prop_assert!((m.rr.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn longer_plateau_raises_fd_and_lowers_pr(extra in 1.0f64..500.0, low in 0.0f64..0.7, mid in 0.0f64..0.74) {
        let make = |len: f64| {
            let pts = vec![(0.0, 0.9), (100.0, mid), (150.0, low), (150.0 + len, 0.9)];
            let c = PerformanceCurve::new(pts).unwrap();
            let b: EpisodeBounds = detect_episode(&c, 0.75, &[]).unwrap();
            compute_metrics(&b, &c, 0.75, 400.0).unwrap()
        };
        let (a, b) = (make(100.0), make(100.0 + extra));
        prop_assert!(b.fd.unwrap() > a.fd.unwrap());
        if low <= mid {
            prop_assert!(b.pr.unwrap() <= a.pr.unwrap() + 1e-12);
        }
    }

    #[test]
    fn donor_is_never_the_afflicted_machine(vs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 5), afflicted in 1u8..6) {
        let cands: Vec<(u8, Vec<f64>)> = vs.into_iter().enumerate().map(|(i, v)| (i as u8 + 1, v)).collect();
        let own = cands[usize::from(afflicted) - 1].1.clone();
        if let Ok((donor, _)) = select_similar_machine(afflicted, &own, &cands) {
            prop_assert_ne!(donor, afflicted);
        }
    }
}
