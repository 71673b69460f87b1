use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::model::{DiagnosisInput, LatentNoise, MmslaModel};
use super::spectral::extract_spectral_features;
use super::{DIAGNOSED_FACTORS, PERF_INPUT, TRACE_INPUT};
use crate::domain::{ComputationTask, TaskStatus};
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{train_classifier, zero_grads, AdamState, Mlp, TrainOptions};
use crate::pipeline::macro_f1;
use crate::rng::{self, tag};

/// Raw `(X^P, X^R)` of a completed task with its Y1 to Y5 presence labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisSample {
    pub task_id: u64,
    pub performance: Vec<f64>,
    pub trace: Vec<[f64; TRACE_INPUT]>,
    pub label: [bool; DIAGNOSED_FACTORS],
}

impl DiagnosisSample {
    pub fn from_task(task: &ComputationTask) -> Result<Self> {
        if task.status != TaskStatus::Completed {
            return Err(Error::MissingModality("performance (task did not complete)"));
        }
        let perf = task.performance.as_ref().ok_or(Error::MissingModality("performance"))?;
        let trace = task.runtime.as_ref().ok_or(Error::MissingModality("runtime trace"))?;
        let l = task.label();
        Ok(Self {
            task_id: task.task_id,
            performance: perf.metrics.to_vec(),
            trace: trace.rows.clone(),
            label: core::array::from_fn(|j| l.present[j]),
        })
    }
}

/// Per-coordinate z-score statistics for both modalities, fitted on a
/// training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub perf_mean: Vec<f64>,
    pub perf_sd: Vec<f64>,
    pub trace_mean: Vec<f64>,
    pub trace_sd: Vec<f64>,
}

fn moments(columns: usize, rows: &mut dyn Iterator<Item = &[f64]>) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0.0;
    let mut sum = vec![0.0; columns];
    let mut sq = vec![0.0; columns];
    for row in rows {
        n += 1.0;
        for c in 0..columns {
            sum[c] += row[c];
            sq[c] += row[c] * row[c];
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let sd = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let v = (q / n - m * m).max(0.0);
            if v > 1e-12 { math::sqrt(v) } else { 1.0 }
        })
        .collect();
    (mean, sd)
}

impl InputScaler {
    pub fn fit(samples: &[&DiagnosisSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("diagnosis training set"));
        }
        let (perf_mean, perf_sd) = moments(PERF_INPUT, &mut samples.iter().map(|s| s.performance.as_slice()));
        let (trace_mean, trace_sd) =
            moments(TRACE_INPUT, &mut samples.iter().flat_map(|s| s.trace.iter().map(|r| r.as_slice())));
        Ok(Self { perf_mean, perf_sd, trace_mean, trace_sd })
    }

    pub fn transform(&self, s: &DiagnosisSample) -> DiagnosisInput {
        DiagnosisInput {
            performance: (0..PERF_INPUT).map(|k| (s.performance[k] - self.perf_mean[k]) / self.perf_sd[k]).collect(),
            trace: s
                .trace
                .iter()
                .map(|r| core::array::from_fn(|c| (r[c] - self.trace_mean[c]) / self.trace_sd[c]))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadMode {
    /// One attention head and classifier per factor (MMSLA).
    Multi,
    /// One head shared by all factor losses (MSLA).
    Single,
}

impl HeadMode {
    pub fn heads(self) -> usize {
        match self {
            HeadMode::Multi => DIAGNOSED_FACTORS,
            HeadMode::Single => 1,
        }
    }

    pub fn method_name(self) -> &'static str {
        match self {
            HeadMode::Multi => "MMSLA",
            HeadMode::Single => "MSLA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisConfig {
    /// KL weight.
    pub alpha: f64,
    /// Classification weight.
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub folds: usize,
    pub heads: HeadMode,
    pub seed: u64,
}

impl Default for DiagnosisConfig {
    fn default() -> Self {
        Self { alpha: 0.1, lambda: 0.1, lr: 3e-3, epochs: 30, batch_size: 16, folds: 5, heads: HeadMode::Multi, seed: 0 }
    }
}

impl DiagnosisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("alpha and lambda must be >= 0 (got {}, {})", self.alpha, self.lambda)));
        }
        if !(self.lr > 0.0) || self.epochs == 0 || self.batch_size == 0 || self.folds < 2 {
            return Err(Error::InvalidParameter("lr > 0, epochs >= 1, batch_size >= 1 and folds >= 2 required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedDiagnoser {
    pub model: MmslaModel,
    pub scaler: InputScaler,
    pub config: DiagnosisConfig,
    /// Mean per-task training loss of every epoch.
    pub loss_history: Vec<f64>,
}

impl TrainedDiagnoser {
    pub fn predict(&self, s: &DiagnosisSample) -> Result<[[f64; 2]; DIAGNOSED_FACTORS]> {
        self.model.predict(&self.scaler.transform(s))
    }

    pub fn predict_labels(&self, s: &DiagnosisSample) -> Result<[bool; DIAGNOSED_FACTORS]> {
        let p = self.predict(s)?;
        Ok(core::array::from_fn(|j| p[j][1] > p[j][0]))
    }
}

/// Per-factor `[P(absent), P(present)]` for a completed task.
pub fn predict_diagnosis(task: &ComputationTask, diagnoser: &TrainedDiagnoser) -> Result<[[f64; 2]; DIAGNOSED_FACTORS]> {
    diagnoser.predict(&DiagnosisSample::from_task(task)?)
}

/// Adam on the mean per-task loss with fresh reparameterization noise every
/// step. `stream` separates the noise and shuffling of different folds.
pub fn train_mmsla(samples: &[&DiagnosisSample], config: &DiagnosisConfig, stream: u64) -> Result<TrainedDiagnoser> {
    config.validate()?;
    let scaler = InputScaler::fit(samples)?;
    let inputs: Vec<DiagnosisInput> = samples.iter().map(|s| scaler.transform(s)).collect();
    let mut init = rng::rng_for(config.seed, &[tag::DIAGNOSIS, stream, 0]);
    let mut model = MmslaModel::new(config.heads.heads(), &mut init)?;
    let mut r = rng::rng_for(config.seed, &[tag::DIAGNOSIS, stream, 1]);
    let mut adam = AdamState::new(config.lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        rng::shuffle(&mut r, &mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            zero_grads(&mut model);
            let w = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let noise = LatentNoise::sample(inputs[i].trace.len(), &mut r);
                let terms = model
                    .accumulate_gradients(&inputs[i], &noise, &samples[i].label, config.alpha, config.lambda, w)
                    .map_err(|e| Error::Diverged(format!("epoch {epoch}, task {}: {e}", samples[i].task_id)))?;
                epoch_loss += terms.total(config.alpha, config.lambda);
            }
            adam.step_model(&mut model, 1.0);
        }
        loss_history.push(epoch_loss / samples.len() as f64);
    }
    Ok(TrainedDiagnoser { model, scaler, config: config.clone(), loss_history })
}

/// Mean and sample standard deviation of a factor's fold scores, over the
/// folds where the score is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorScore {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub defined_folds: usize,
}

impl FactorScore {
    pub fn from_folds(scores: &[Option<f64>]) -> Self {
        let v: Vec<f64> = scores.iter().flatten().copied().collect();
        match v.len() {
            0 => Self { mean: None, sd: None, defined_folds: 0 },
            1 => Self { mean: Some(v[0]), sd: None, defined_folds: 1 },
            n => Self { mean: Some(math::mean(&v)), sd: Some(math::sample_std(&v)), defined_folds: n },
        }
    }

    /// `0.95 (0.01)` style cell.
    pub fn cell(&self) -> String {
        match (self.mean, self.sd) {
            (Some(m), Some(s)) => format!("{m:.2} ({s:.2})"),
            (Some(m), None) => format!("{m:.2} (-)"),
            _ => String::from("n/a"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub method: String,
    /// Macro-F1 per fold and factor; `None` where the validation fold holds a
    /// single class for that factor.
    pub fold_scores: Vec<[Option<f64>; DIAGNOSED_FACTORS]>,
    pub factors: [FactorScore; DIAGNOSED_FACTORS],
    pub warnings: Vec<String>,
}

impl CvReport {
    pub fn mean_over_factors(&self) -> Option<f64> {
        let m: Vec<f64> = self.factors.iter().filter_map(|f| f.mean).collect();
        (m.len() == DIAGNOSED_FACTORS).then(|| math::mean(&m))
    }
}

/// Fold index of every sample: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng::rng_for(seed, &[tag::FOLDS]), &mut order);
    let mut out = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        out[i] = k % folds;
    }
    out
}

/// K-fold protocol shared by every diagnoser: `fit_predict(train, validation)`
/// returns one label vector per validation sample.
pub fn cross_validate_with<F>(method: &str, samples: &[DiagnosisSample], folds: usize, seed: u64, mut fit_predict: F) -> Result<CvReport>
where
    F: FnMut(usize, &[&DiagnosisSample], &[&DiagnosisSample]) -> Result<Vec<[bool; DIAGNOSED_FACTORS]>>,
{
    if samples.len() < folds || folds < 2 {
        return Err(Error::InvalidParameter(format!("{} samples cannot fill {folds} folds", samples.len())));
    }
    let assign = fold_assignment(samples.len(), folds, seed);
    let mut fold_scores = Vec::with_capacity(folds);
    let mut warnings = Vec::new();
    for k in 0..folds {
        let train: Vec<&DiagnosisSample> = samples.iter().zip(&assign).filter(|(_, &f)| f != k).map(|(s, _)| s).collect();
        let val: Vec<&DiagnosisSample> = samples.iter().zip(&assign).filter(|(_, &f)| f == k).map(|(s, _)| s).collect();
        let pred = fit_predict(k, &train, &val)?;
        let mut row = [None; DIAGNOSED_FACTORS];
        for (j, slot) in row.iter_mut().enumerate() {
            let truth: Vec<usize> = val.iter().map(|s| s.label[j] as usize).collect();
            let positives = truth.iter().filter(|&&t| t == 1).count();
            if positives == 0 || positives == truth.len() {
                warnings.push(format!("{method}: fold {k} has a single class for Y{}; F1 undefined", j + 1));
                continue;
            }
            let p: Vec<usize> = pred.iter().map(|l| l[j] as usize).collect();
            *slot = Some(macro_f1(&p, &truth, 2));
        }
        fold_scores.push(row);
    }
    let factors = core::array::from_fn(|j| {
        let col: Vec<Option<f64>> = fold_scores.iter().map(|r| r[j]).collect();
        FactorScore::from_folds(&col)
    });
    Ok(CvReport { method: method.into(), fold_scores, factors, warnings })
}

/// Five-fold (by default) cross-validation of MMSLA or MSLA; scalers are fitted
/// on each training fold only.
pub fn cross_validate_mmsla(samples: &[DiagnosisSample], config: &DiagnosisConfig) -> Result<CvReport> {
    config.validate()?;
    cross_validate_with(config.heads.method_name(), samples, config.folds, config.seed, |k, train, val| {
        let d = train_mmsla(train, config, k as u64)?;
        val.iter().map(|s| d.predict_labels(s)).collect()
    })
}

/// Spectral-feature baseline: one softmax regression per factor on the
/// spectral summary of `X^R` together with `X^P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBaseline {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub heads: Vec<Mlp>,
}

pub fn baseline_features(s: &DiagnosisSample) -> Result<Vec<f64>> {
    let trace = crate::domain::RuntimeTrace { rows: s.trace.clone(), sampling_period: 1.0 };
    let mut f = extract_spectral_features(&trace)?;
    f.extend_from_slice(&s.performance);
    Ok(f)
}

fn standardize_rows(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    moments(rows[0].len(), &mut rows.iter().map(|r| r.as_slice()))
}

fn apply_standardization(x: &[f64], mean: &[f64], sd: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(sd).map(|((v, m), s)| (v - m) / s).collect()
}

impl SpectralBaseline {
    pub fn fit(samples: &[&DiagnosisSample], seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("baseline training set"));
        }
        let raw: Vec<Vec<f64>> = samples.iter().map(|s| baseline_features(s)).collect::<Result<_>>()?;
        let (mean, sd) = standardize_rows(&raw);
        let x: Vec<Vec<f64>> = raw.iter().map(|r| apply_standardization(r, &mean, &sd)).collect();
        let opts = TrainOptions { lr: 1e-2, max_epochs: 200, patience: 5, batch_size: 32 };
        let mut heads = Vec::with_capacity(DIAGNOSED_FACTORS);
        for j in 0..DIAGNOSED_FACTORS {
            let y: Vec<usize> = samples.iter().map(|s| s.label[j] as usize).collect();
            let mut r = rng::rng_for(seed, &[tag::DIAGNOSIS, 100 + j as u64]);
            let mut m = Mlp::new(x[0].len(), &[], 2, &mut r);
            train_classifier(&mut m, &x, &y, &[], &[], &opts, &mut r)?;
            heads.push(m);
        }
        Ok(Self { mean, sd, heads })
    }

    pub fn predict_labels(&self, s: &DiagnosisSample) -> Result<[bool; DIAGNOSED_FACTORS]> {
        let x = apply_standardization(&baseline_features(s)?, &self.mean, &self.sd);
        Ok(core::array::from_fn(|j| self.heads[j].predict(&x) == 1))
    }
}

pub fn cross_validate_baseline(samples: &[DiagnosisSample], folds: usize, seed: u64) -> Result<CvReport> {
    cross_validate_with("Spectral baseline", samples, folds, seed, |k, train, val| {
        let b = SpectralBaseline::fit(train, rng::derive(seed, &[k as u64]))?;
        val.iter().map(|s| b.predict_labels(s)).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Traces whose level encodes Y5 and whose performance encodes Y4.
    fn fixture(n: usize, seed: u64) -> Vec<DiagnosisSample> {
        let mut r = rng::rng_from(seed);
        (0..n)
            .map(|i| {
                let label: [bool; 5] = core::array::from_fn(|j| rng::uniform(&mut r) < 0.2 + 0.1 * j as f64);
                let len = if label[4] { 12 } else { 6 };
                let cpu = if label[4] { 70.0 } else { 40.0 };
                let acc = if label[3] { 0.7 } else { 0.9 };
                DiagnosisSample {
                    task_id: i as u64,
                    performance: (0..9).map(|_| acc + 0.03 * rng::normal(&mut r)).collect(),
                    trace: (0..len)
                        .map(|_| core::array::from_fn(|c| if c == 0 { cpu } else { 10.0 } + 2.0 * rng::normal(&mut r)))
                        .collect(),
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn training_loss_decreases() {
        let data = fixture(32, 1);
        let refs: Vec<&DiagnosisSample> = data.iter().collect();
        let cfg = DiagnosisConfig { epochs: 15, batch_size: 8, ..Default::default() };
        let d = train_mmsla(&refs, &cfg, 0).unwrap();
        let (first, last) = (d.loss_history[0], *d.loss_history.last().unwrap());
        assert!(last < 0.9 * first, "{first} -> {last}");
    }

    #[test]
    fn cv_is_deterministic_and_shaped() {
        let data = fixture(40, 2);
        let cfg = DiagnosisConfig { epochs: 3, batch_size: 8, seed: 5, ..Default::default() };
        let a = cross_validate_mmsla(&data, &cfg).unwrap();
        let b = cross_validate_mmsla(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fold_scores.len(), 5);
        assert_eq!(a.factors.len(), 5);
    }

    #[test]
    fn single_class_fold_is_undefined() {
        let mut data = fixture(20, 3);
        for s in &mut data {
            s.label[0] = false;
        }
        data[0].label[0] = true;
        let rep = cross_validate_with("probe", &data, 5, 1, |_, _, val| Ok(val.iter().map(|s| s.label).collect())).unwrap();
        assert_eq!(rep.factors[0].defined_folds, 1);
        assert!(rep.warnings.iter().any(|w| w.contains("Y1")));
        assert_eq!(rep.factors[0].mean, Some(1.0));
    }

    #[test]
    fn fold_scores_summarize() {
        let s = FactorScore::from_folds(&[Some(0.9), None, Some(0.7)]);
        assert_eq!(s.defined_folds, 2);
        assert!((s.mean.unwrap() - 0.8).abs() < 1e-12);
        assert!((s.sd.unwrap() - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.cell(), "0.80 (0.14)");
    }

    #[test]
    fn folds_partition() {
        let a = fold_assignment(23, 5, 9);
        for k in 0..5 {
            let c = a.iter().filter(|&&f| f == k).count();
            assert!(c == 4 || c == 5);
        }
    }

    #[test]
    fn baseline_learns_separable_factor() {
        let data = fixture(120, 4);
        let rep = cross_validate_baseline(&data, 5, 0).unwrap();
        assert!(rep.factors[4].mean.unwrap() > 0.95);
        assert!(rep.factors[3].mean.unwrap() > 0.95);
    }

    #[test]
    fn scaler_standardizes_training_data() {
        let data = fixture(30, 5);
        let refs: Vec<&DiagnosisSample> = data.iter().collect();
        let sc = InputScaler::fit(&refs).unwrap();
        let xs: Vec<DiagnosisInput> = data.iter().map(|s| sc.transform(s)).collect();
        let col: Vec<f64> = xs.iter().flat_map(|x| x.trace.iter().map(|r| r[0])).collect();
        assert!(math::mean(&col).abs() < 1e-9);
        assert!((math::std_dev(&col) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_incomplete_tasks() {
        let t = ComputationTask::new(1, 0, 1);
        assert!(matches!(DiagnosisSample::from_task(&t), Err(Error::MissingModality(_))));
    }
}
