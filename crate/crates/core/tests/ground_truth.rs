use mii_resil_core::datagen::{derive_ground_truth_models, generate_machine_batch, MachineSource};
use mii_resil_core::domain::Quality;
use mii_resil_core::experiment::{generate_data, DataArtifacts, ExperimentConfig};
use mii_resil_core::nn::export_params;

fn data(seed: u64) -> DataArtifacts {
    generate_data(&ExperimentConfig::desk(seed)).unwrap()
}

fn disagreement(a: &[Quality], b: &[Quality]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

#[test]
fn zero_sigma_reproduces_the_baseline() {
    let d = data(0);
    let gts = derive_ground_truth_models(&d.baseline, 0.0, 9).unwrap();
    let reference: Vec<Quality> = d.base.iter().map(|s| d.baseline.predict(s)).collect();
    for gt in &gts {
        let labels: Vec<Quality> = d.base.iter().map(|s| gt.label(s)).collect();
        assert_eq!(labels, reference);
    }
}

#[test]
fn only_the_final_layer_is_perturbed() {
    let d = data(0);
    let base = export_params(&mut d.baseline.classifier.clone(), "");
    let final_prefix = format!(".layer{}.", d.baseline.classifier.layers.len() - 1);
    for src in &d.sources {
        let theirs = export_params(&mut src.ground_truth.pipeline.classifier.clone(), "");
        assert_eq!(theirs.len(), base.len());
        let changed: Vec<&String> = theirs.keys().filter(|k| theirs[*k] != base[*k]).collect();
        assert_eq!(changed.len(), 2, "{changed:?}");
        assert!(changed.iter().all(|k| k.starts_with(&final_prefix)), "{changed:?}");
    }
}

#[test]
fn default_sigma_disagreement_band() {
    // per seed the value ranges from under 1% to about 20%; the band holds for the average
    let mut means = Vec::new();
    for seed in 0..12 {
        let d = data(seed);
        let labels: Vec<Vec<Quality>> = d.sources.iter().map(|s| d.base.iter().map(|x| s.ground_truth.label(x)).collect()).collect();
        let mut pairs = Vec::new();
        for i in 0..labels.len() {
            for j in i + 1..labels.len() {
                pairs.push(disagreement(&labels[i], &labels[j]));
            }
        }
        means.push(pairs.iter().sum::<f64>() / pairs.len() as f64);
    }
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    assert!((0.02..=0.30).contains(&mean), "mean pairwise disagreement {mean:.3} (per seed {means:?})");
    assert!(means.iter().all(|m| *m <= 0.30), "{means:?}");
}

#[test]
fn machine_batches_hit_the_ratio_exactly() {
    let d = data(1);
    let src: &MachineSource = &d.sources[0];
    for (ratio, want) in [(0.4, 40), (0.25, 25), (0.1, 10)] {
        let b = generate_machine_batch(src, 100, ratio, 5).unwrap();
        assert_eq!(b.len(), 100);
        assert_eq!(b.nonconforming_count(), want);
        assert_eq!(b, generate_machine_batch(src, 100, ratio, 5).unwrap());
    }
}

#[test]
fn labeling_is_a_pure_function() {
    let d = data(2);
    let gt = &d.sources[3].ground_truth;
    for s in &d.base {
        let copy = s.clone();
        assert_eq!(gt.label(s), gt.label(&copy));
    }
}
