use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::spectral::{extract_spectral_features, SPECTRAL_DIM};
use crate::domain::{ComputationTask, Factor, TaskStatus};
use crate::error::{Error, Result};
use crate::nn::{train_classifier, Mlp, TrainOptions};
use crate::pipeline::Confusion;
use crate::rng::{self, tag};

pub const CYBER_FEATURES: usize = SPECTRAL_DIM + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CyberVerdict {
    NodeFailure,
    ChannelDisruption,
}

impl CyberVerdict {
    pub fn factor(self) -> Factor {
        match self {
            CyberVerdict::NodeFailure => Factor::Y6,
            CyberVerdict::ChannelDisruption => Factor::Y7,
        }
    }

    fn class(self) -> usize {
        self as usize
    }

    fn from_class(c: usize) -> Self {
        if c == 0 { CyberVerdict::NodeFailure } else { CyberVerdict::ChannelDisruption }
    }
}

fn require_failed(task: &ComputationTask) -> Result<()> {
    match task.status {
        TaskStatus::NodeLost | TaskStatus::TimedOut => Ok(()),
        s => Err(Error::InvalidTask(alloc::format!("task {} has status {s:?}; cyber-physical diagnosis needs a failed task", task.task_id))),
    }
}

/// Reference rule: a lost node means Y6, a timeout means Y7.
pub fn rule_verdict(task: &ComputationTask) -> Result<CyberVerdict> {
    require_failed(task)?;
    Ok(if task.status == TaskStatus::NodeLost { CyberVerdict::NodeFailure } else { CyberVerdict::ChannelDisruption })
}

/// The factor whose directive actually hit the task's node.
pub fn true_verdict(task: &ComputationTask) -> Option<CyberVerdict> {
    if task.directives.disabled_nodes.contains(&task.node_id) {
        Some(CyberVerdict::NodeFailure)
    } else if task.directives.disrupted_channels.contains(&task.node_id) {
        Some(CyberVerdict::ChannelDisruption)
    } else {
        None
    }
}

/// Spectral features of whatever trace exists (zeros when it is too short),
/// followed by the NodeLost and TimedOut status flags.
pub fn cyber_features(task: &ComputationTask) -> Result<Vec<f64>> {
    require_failed(task)?;
    let mut f = match &task.runtime {
        Some(t) if t.len() >= 4 => extract_spectral_features(t)?,
        _ => vec![0.0; SPECTRAL_DIM],
    };
    f.push((task.status == TaskStatus::NodeLost) as u8 as f64);
    f.push((task.status == TaskStatus::TimedOut) as u8 as f64);
    Ok(f)
}

/// Softmax regression over [`cyber_features`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyberClassifier {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub model: Mlp,
}

impl CyberClassifier {
    pub fn fit(features: &[Vec<f64>], truth: &[CyberVerdict], seed: u64) -> Result<Self> {
        if features.is_empty() || features.len() != truth.len() {
            return Err(Error::Empty("cyber-physical training set"));
        }
        let n = features.len() as f64;
        let mean: Vec<f64> = (0..CYBER_FEATURES).map(|k| features.iter().map(|f| f[k]).sum::<f64>() / n).collect();
        let sd: Vec<f64> = (0..CYBER_FEATURES)
            .map(|k| {
                let v = features.iter().map(|f| (f[k] - mean[k]) * (f[k] - mean[k])).sum::<f64>() / n;
                if v > 1e-12 { crate::math::sqrt(v) } else { 1.0 }
            })
            .collect();
        let mut c = Self { mean, sd, model: Mlp::new(CYBER_FEATURES, &[], 2, &mut rng::rng_for(seed, &[tag::DIAGNOSIS, 200])) };
        let x: Vec<Vec<f64>> = features.iter().map(|f| c.standardize(f)).collect();
        let y: Vec<usize> = truth.iter().map(|t| t.class()).collect();
        let opts = TrainOptions { lr: 1e-2, max_epochs: 200, patience: 5, batch_size: 16 };
        train_classifier(&mut c.model, &x, &y, &[], &[], &opts, &mut rng::rng_for(seed, &[tag::DIAGNOSIS, 201]))?;
        Ok(c)
    }

    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.mean).zip(&self.sd).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn classify_features(&self, f: &[f64]) -> CyberVerdict {
        CyberVerdict::from_class(self.model.predict(&self.standardize(f)))
    }
}

pub fn classify_cyberphysical(task: &ComputationTask, model: &CyberClassifier) -> Result<CyberVerdict> {
    Ok(model.classify_features(&cyber_features(task)?))
}

/// F1 of each verdict class (Y6 then Y7) against a reference labelling.
pub fn verdict_f1(predicted: &[CyberVerdict], reference: &[CyberVerdict]) -> [f64; 2] {
    let p: Vec<usize> = predicted.iter().map(|v| v.class()).collect();
    let t: Vec<usize> = reference.iter().map(|v| v.class()).collect();
    [Confusion::from_predictions(&p, &t, 0).f1(), Confusion::from_predictions(&p, &t, 1).f1()]
}
