//! The AI-pipeline layer: augmentation, standardization and a feed-forward
//! classifier, trained per machine and deployed as a top-3 ensemble.

mod features;
mod metrics;

pub use features::{series_features, ChannelScaler, Standardization, FEATURE_BLOCKS, FEATURE_DIM, FEATURES_PER_CHANNEL};
pub use metrics::{macro_f1, Confusion, Precision};

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datagen::{apply_augmentation, AugmentationKind, AugmentationOp};
use crate::domain::{ComputationTask, MTSSample, PerformanceVector, Quality, PERF_DIM, PIPELINES_PER_MACHINE};
use crate::error::{Error, Result};
use crate::nn::{train_classifier, ClassifierFit, Mlp, TrainOptions};
use crate::rng::{self, tag};

/// Hidden-layer widths of the eight classifier architectures.
pub const ARCHITECTURES: [&[usize]; 8] = [&[8], &[16], &[32], &[64], &[8, 8], &[16, 16], &[32, 16], &[32, 32]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub id: usize,
    pub augmentation: AugmentationKind,
    pub standardization: Standardization,
    pub hidden: Vec<usize>,
    pub lr: f64,
}

/// The axes of the configuration grid; configs enumerate with the learning
/// rate varying fastest and augmentation slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub augmentations: Vec<AugmentationKind>,
    pub standardizations: Vec<Standardization>,
    pub architectures: Vec<Vec<usize>>,
    pub learning_rates: Vec<f64>,
}

impl GridSpec {
    pub fn full() -> Self {
        Self {
            augmentations: vec![AugmentationKind::None, AugmentationKind::Jitter, AugmentationKind::Scaling, AugmentationKind::TimeWarp],
            standardizations: vec![Standardization::ZScore, Standardization::MinMax],
            architectures: ARCHITECTURES.iter().map(|a| a.to_vec()).collect(),
            learning_rates: vec![1e-2, 1e-3],
        }
    }

    /// The 2x2x2x2 grid used by tests and the desk profile.
    pub fn desk() -> Self {
        Self {
            augmentations: vec![AugmentationKind::None, AugmentationKind::Jitter],
            standardizations: vec![Standardization::ZScore, Standardization::MinMax],
            architectures: vec![vec![16], vec![32, 16]],
            learning_rates: vec![1e-2, 1e-3],
        }
    }

    pub fn size(&self) -> usize {
        self.augmentations.len() * self.standardizations.len() * self.architectures.len() * self.learning_rates.len()
    }
}

pub fn build_config_grid(spec: &GridSpec, requested_size: usize) -> Result<Vec<PipelineConfig>> {
    if spec.size() == 0 || spec.size() != requested_size {
        return Err(Error::InvalidParameter(alloc::format!(
            "grid dimensions multiply to {} but {requested_size} configurations were requested",
            spec.size()
        )));
    }
    if spec.architectures.iter().any(|a| a.iter().any(|&w| w == 0)) {
        return Err(Error::InvalidParameter("zero-width hidden layer".into()));
    }
    if spec.learning_rates.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
        return Err(Error::InvalidParameter("learning rates must be positive".into()));
    }
    let mut out = Vec::with_capacity(requested_size);
    for &augmentation in &spec.augmentations {
        for &standardization in &spec.standardizations {
            for hidden in &spec.architectures {
                for &lr in &spec.learning_rates {
                    out.push(PipelineConfig { id: out.len(), augmentation, standardization, hidden: hidden.clone(), lr });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineTraining {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
}

impl Default for PipelineTraining {
    fn default() -> Self {
        Self { max_epochs: 200, patience: 5, batch_size: 32, validation_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPipeline {
    pub config: PipelineConfig,
    pub scaler: ChannelScaler,
    pub classifier: Mlp,
    /// Macro-F1 on the held-out validation split.
    pub validation_score: f64,
    pub machine_id: u8,
    pub fit: ClassifierFit,
}

impl TrainedPipeline {
    pub fn features(&self, s: &MTSSample) -> Vec<f64> {
        series_features(&self.scaler.transform(s), s.len)
    }

    pub fn predict(&self, s: &MTSSample) -> Quality {
        Quality::from_class(self.classifier.predict(&self.features(s)))
    }

    pub fn predict_classes(&self, samples: &[MTSSample]) -> Vec<usize> {
        samples.iter().map(|s| self.predict(s).as_class()).collect()
    }

    /// Flattened weights and bias of the output layer.
    pub fn final_layer_vector(&self) -> Vec<f64> {
        let last = self.classifier.final_layer();
        let mut v = last.weights.data().to_vec();
        v.extend_from_slice(last.bias.data());
        v
    }
}

pub fn train_pipeline(config: &PipelineConfig, corpus: &[MTSSample], machine_id: u8, seed: u64) -> Result<TrainedPipeline> {
    train_pipeline_with(config, corpus, machine_id, seed, &PipelineTraining::default())
}

pub fn train_pipeline_with(
    config: &PipelineConfig,
    corpus: &[MTSSample],
    machine_id: u8,
    seed: u64,
    opts: &PipelineTraining,
) -> Result<TrainedPipeline> {
    if corpus.len() < 2 {
        return Err(Error::Empty("pipeline training corpus"));
    }
    let mut r = rng::rng_for(seed, &[tag::PIPELINE, u64::from(machine_id), config.id as u64]);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    rng::shuffle(&mut r, &mut order);
    let n_val = (crate::math::round(corpus.len() as f64 * opts.validation_fraction) as usize).clamp(1, corpus.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);

    let train: Vec<&MTSSample> = train_idx.iter().map(|&i| &corpus[i]).collect();
    let scaler = ChannelScaler::fit(config.standardization, &train)?;
    let featurize = |values: &[f64], len: usize| {
        let tmp = MTSSample { id: 0, len, values: values.to_vec(), label: Quality::Conforming };
        series_features(&scaler.transform(&tmp), len)
    };

    let mut x_train = Vec::with_capacity(2 * train.len());
    let mut y_train = Vec::with_capacity(2 * train.len());
    for s in &train {
        x_train.push(featurize(&s.values, s.len));
        y_train.push(s.label.as_class());
    }
    if config.augmentation != AugmentationKind::None {
        let op = AugmentationOp::default_for(config.augmentation);
        for s in &train {
            let values = apply_augmentation(&s.values, s.len, &op, &mut r)?;
            x_train.push(featurize(&values, s.len));
            y_train.push(s.label.as_class());
        }
    }
    let x_val: Vec<Vec<f64>> = val_idx.iter().map(|&i| featurize(&corpus[i].values, corpus[i].len)).collect();
    let y_val: Vec<usize> = val_idx.iter().map(|&i| corpus[i].label.as_class()).collect();

    let mut classifier = Mlp::new(FEATURE_DIM, &config.hidden, 2, &mut r);
    let topts = TrainOptions { lr: config.lr, max_epochs: opts.max_epochs, patience: opts.patience, batch_size: opts.batch_size };
    let fit = train_classifier(&mut classifier, &x_train, &y_train, &x_val, &y_val, &topts, &mut r)?;
    let predicted: Vec<usize> = x_val.iter().map(|x| classifier.predict(x)).collect();
    let validation_score = macro_f1(&predicted, &y_val, 2);
    Ok(TrainedPipeline { config: config.clone(), scaler, classifier, validation_score, machine_id, fit })
}

/// Ranks `(config id, score)` pairs by descending score, ties to the lower id,
/// and returns the first `k` ids.
pub fn select_top(scores: &[(usize, f64)], k: usize) -> Result<Vec<usize>> {
    if scores.len() < k {
        return Err(Error::InsufficientPipelines { trained: scores.len(), needed: k });
    }
    let mut ranked = scores.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.iter().take(k).map(|&(id, _)| id).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigScore {
    pub config_id: usize,
    /// `None` when training diverged.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineDeployment {
    pub machine_id: u8,
    /// Machine whose training produced the current pipelines.
    pub provenance: u8,
    pub pipelines: Vec<TrainedPipeline>,
    pub ranking: Vec<ConfigScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub machines: Vec<MachineDeployment>,
}

impl Deployment {
    pub fn machine(&self, id: u8) -> Option<&MachineDeployment> {
        self.machines.iter().find(|m| m.machine_id == id)
    }

    pub fn machine_mut(&mut self, id: u8) -> Option<&mut MachineDeployment> {
        self.machines.iter_mut().find(|m| m.machine_id == id)
    }

    pub fn pipeline_count(&self) -> usize {
        self.machines.iter().map(|m| m.pipelines.len()).sum()
    }
}

/// Trains every config on one machine's corpus and keeps the top three.
pub fn deploy_machine(
    machine_id: u8,
    corpus: &[MTSSample],
    grid: &[PipelineConfig],
    seed: u64,
    opts: &PipelineTraining,
) -> Result<MachineDeployment> {
    let mut trained = Vec::new();
    let mut ranking = Vec::with_capacity(grid.len());
    for config in grid {
        match train_pipeline_with(config, corpus, machine_id, seed, opts) {
            Ok(p) => {
                ranking.push(ConfigScore { config_id: config.id, score: Some(p.validation_score) });
                trained.push(p);
            }
            Err(Error::Diverged(_)) => ranking.push(ConfigScore { config_id: config.id, score: None }),
            Err(e) => return Err(e),
        }
    }
    let scores: Vec<(usize, f64)> = trained.iter().map(|p| (p.config.id, p.validation_score)).collect();
    let top = select_top(&scores, PIPELINES_PER_MACHINE)?;
    let pipelines = top.iter().map(|&id| trained.iter().find(|p| p.config.id == id).cloned().unwrap()).collect();
    Ok(MachineDeployment { machine_id, provenance: machine_id, pipelines, ranking })
}

pub fn rank_and_deploy(
    corpora: &[(u8, Vec<MTSSample>)],
    grid: &[PipelineConfig],
    seed: u64,
    opts: &PipelineTraining,
) -> Result<Deployment> {
    let machines = corpora
        .iter()
        .map(|(id, corpus)| deploy_machine(*id, corpus, grid, seed, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(Deployment { machines })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularityOutcome {
    pub predictions: Vec<Vec<usize>>,
    pub compute_time: f64,
    /// Affected pipeline indices and the constant class each emits.
    pub affected: Vec<(usize, usize)>,
}

/// Forces `level` seeded pipelines to emit one constant class for the whole
/// batch (seeded unless `forced_class` is given) and doubles the compute time
/// when any pipeline is affected.
pub fn apply_singularity(
    predictions: Vec<Vec<usize>>,
    level: u8,
    forced_class: Option<usize>,
    compute_time: f64,
    seed: u64,
) -> Result<SingularityOutcome> {
    let level = usize::from(level);
    if level > predictions.len() {
        return Err(Error::InvalidParameter(alloc::format!(
            "{level} singular pipelines requested but only {} deployed",
            predictions.len()
        )));
    }
    if let Some(c) = forced_class.filter(|&c| c > 1) {
        return Err(Error::InvalidParameter(alloc::format!("singular class {c} is not a quality class")));
    }
    if level == 0 {
        return Ok(SingularityOutcome { predictions, compute_time, affected: Vec::new() });
    }
    let mut r = rng::rng_for(seed, &[tag::SINGULAR]);
    let mut chosen = rng::choose_distinct(&mut r, predictions.len(), level);
    chosen.sort_unstable();
    let mut predictions = predictions;
    let mut affected = Vec::with_capacity(level);
    for idx in chosen {
        let drawn = rng::below(&mut r, 2);
        let class = forced_class.unwrap_or(drawn);
        predictions[idx].iter_mut().for_each(|p| *p = class);
        affected.push((idx, class));
    }
    Ok(SingularityOutcome { predictions, compute_time: 2.0 * compute_time, affected })
}

/// Accuracy, precision and F1 per pipeline, plus the pipelines whose precision
/// was defined by the zero-denominator convention.
pub fn performance_from_predictions(predictions: &[Vec<usize>], truth: &[usize]) -> (PerformanceVector, Vec<u8>) {
    let mut metrics = [0.0; PERF_DIM];
    let mut flags = Vec::new();
    for (k, pred) in predictions.iter().enumerate().take(PIPELINES_PER_MACHINE) {
        let c = Confusion::from_predictions(pred, truth, Quality::Nonconforming.as_class());
        let p = c.precision();
        metrics[3 * k] = c.accuracy();
        metrics[3 * k + 1] = p.value;
        metrics[3 * k + 2] = c.f1();
        if p.undefined {
            flags.push(k as u8);
        }
    }
    (PerformanceVector { metrics }, flags)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub performance: PerformanceVector,
    pub compute_time: f64,
    pub singular: Vec<(usize, usize)>,
}

/// Runs the machine's deployed pipelines over the task batch, honoring the
/// singularity directive, and records precision flags on the task.
pub fn execute_pipelines(task: &mut ComputationTask, deployment: &Deployment, compute_time: f64, seed: u64) -> Result<Execution> {
    let machine = deployment
        .machine(task.machine_id)
        .ok_or_else(|| Error::InvalidTask(alloc::format!("machine {} has no deployment", task.machine_id)))?;
    let batch = task.batch.as_ref().ok_or(Error::Empty("task batch"))?;
    if batch.is_empty() {
        return Err(Error::Empty("task batch"));
    }
    let predictions: Vec<Vec<usize>> = machine.pipelines.iter().map(|p| p.predict_classes(&batch.samples)).collect();
    let truth: Vec<usize> = batch.samples.iter().map(|s| s.label.as_class()).collect();
    let outcome = apply_singularity(
        predictions,
        task.directives.singular_pipelines,
        task.directives.singular_class.map(usize::from),
        compute_time,
        rng::derive(seed, &[tag::SINGULAR, task.task_id]),
    )?;
    let (performance, flags) = performance_from_predictions(&outcome.predictions, &truth);
    task.precision_flags = flags;
    Ok(Execution { performance, compute_time: outcome.compute_time, singular: outcome.affected })
}

/// Shannon entropy (nats) of a batch of class predictions.
pub fn prediction_entropy(predictions: &[usize]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let n = predictions.len() as f64;
    let ones = predictions.iter().filter(|&&p| p == 1).count() as f64;
    [ones / n, 1.0 - ones / n].iter().filter(|&&p| p > 0.0).map(|&p| -p * crate::math::ln(p)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::CHANNELS;

    #[test]
    fn full_grid_has_128_configs() {
        assert_eq!(build_config_grid(&GridSpec::full(), 128).unwrap().len(), 128);
    }

    #[test]
    fn desk_grid_has_16_configs() {
        let g = build_config_grid(&GridSpec::desk(), 16).unwrap();
        assert_eq!(g.len(), 16);
        assert!(g.iter().enumerate().all(|(i, c)| c.id == i));
    }

    #[test]
    fn grid_enumeration_is_a_stable_bijection() {
        let a = build_config_grid(&GridSpec::full(), 128).unwrap();
        let b = build_config_grid(&GridSpec::full(), 128).unwrap();
        assert_eq!(a, b);
        let mut tuples: Vec<_> = a
            .iter()
            .map(|c| (c.augmentation, c.standardization, c.hidden.clone(), c.lr.to_bits()))
            .collect();
        tuples.sort();
        tuples.dedup();
        assert_eq!(tuples.len(), 128);
    }

    #[test]
    fn inconsistent_grid_size_rejected() {
        assert!(build_config_grid(&GridSpec::desk(), 128).is_err());
    }

    #[test]
    fn ties_break_to_lower_config_id() {
        let top = select_top(&[(7, 0.9), (3, 0.9), (5, 0.95), (1, 0.2)], 3).unwrap();
        assert_eq!(top, vec![5, 3, 7]);
        assert!(select_top(&[(0, 1.0), (1, 1.0)], 3).is_err());
    }

    #[test]
    fn singularity_level_zero_is_identity() {
        let preds = vec![vec![0, 1, 1], vec![1, 0, 1], vec![0, 0, 1]];
        let out = apply_singularity(preds.clone(), 0, None, 360.0, 9).unwrap();
        assert_eq!(out.predictions, preds);
        assert_eq!(out.compute_time, 360.0);
    }

    #[test]
    fn singularity_level_two_zeroes_two_entropies() {
        let preds = vec![vec![0, 1, 1, 0], vec![1, 0, 1, 0], vec![0, 0, 1, 1]];
        for seed in 0..20 {
            let out = apply_singularity(preds.clone(), 2, None, 360.0, seed).unwrap();
            let zero = out.predictions.iter().filter(|p| prediction_entropy(p) == 0.0).count();
            assert_eq!(zero, 2);
            assert_eq!(out.compute_time, 720.0);
        }
        let one = apply_singularity(preds, 1, None, 360.0, 3).unwrap();
        assert_eq!(one.compute_time, 720.0);
    }

    #[test]
    fn singular_accuracy_is_share_of_constant_class() {
        let truth = vec![1, 0, 0, 0, 1, 0, 0, 0, 0, 0];
        let preds = vec![vec![0; 10], vec![1; 10], truth.clone()];
        let (pv, flags) = performance_from_predictions(&preds, &truth);
        assert_eq!(pv.accuracy(0), 0.8);
        assert_eq!(pv.accuracy(1), 0.2);
        assert_eq!(pv.precision(0), 0.0);
        assert_eq!(flags, vec![0]);
        assert_eq!(pv.f1(2), 1.0);
    }

    /// Samples whose first channel mean is +-1 by class; a brute-force
    /// threshold on that feature separates them perfectly.
    fn separable_corpus(n: usize) -> Vec<MTSSample> {
        let mut r = rng::rng_from(17);
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Quality::Nonconforming } else { Quality::Conforming };
                let shift = if label == Quality::Nonconforming { 1.0 } else { -1.0 };
                let len = 32;
                let mut values: Vec<f64> = (0..CHANNELS * len).map(|_| 0.3 * rng::normal(&mut r)).collect();
                values[..len].iter_mut().for_each(|v| *v += shift);
                MTSSample::new(i as u64, len, values, label).unwrap()
            })
            .collect()
    }

    #[test]
    fn separable_corpus_reaches_high_validation_f1() {
        let corpus = separable_corpus(120);
        let oracle_errors = corpus
            .iter()
            .filter(|s| (crate::math::mean(s.channel(0)) > 0.0) != (s.label == Quality::Nonconforming))
            .count();
        assert_eq!(oracle_errors, 0);
        let grid = build_config_grid(&GridSpec::desk(), 16).unwrap();
        let p = train_pipeline(&grid[0], &corpus, 1, 3).unwrap();
        assert!(p.validation_score >= 0.95, "{}", p.validation_score);
        let again = train_pipeline(&grid[0], &corpus, 1, 3).unwrap();
        assert_eq!(p.validation_score, again.validation_score);
    }
}
