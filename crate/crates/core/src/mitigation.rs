//! Layer-specific mitigation: substitute the data source, replace the deployed
//! pipelines, or move a task to another node.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{Factor, Layer};
use crate::error::{Error, Result};
use crate::math;
use crate::pipeline::Deployment;
use crate::rng::{self, tag};
use crate::testbed::NodeHealth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MitigationKind {
    SubstituteData,
    ReplacePipelines,
    ReassignTask,
}

impl MitigationKind {
    pub fn layer(self) -> Layer {
        match self {
            MitigationKind::SubstituteData => Layer::Data,
            MitigationKind::ReplacePipelines => Layer::Pipeline,
            MitigationKind::ReassignTask => Layer::CyberPhysical,
        }
    }

    pub fn for_layer(layer: Layer) -> Self {
        match layer {
            Layer::Data => MitigationKind::SubstituteData,
            Layer::Pipeline => MitigationKind::ReplacePipelines,
            Layer::CyberPhysical => MitigationKind::ReassignTask,
        }
    }
}

/// One issued action. `source`/`target` are machine ids for data and pipeline
/// actions (afflicted, donor) and node ids for reassignment (failed, new).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationAction {
    pub kind: MitigationKind,
    pub source: u8,
    pub target: u8,
    pub issued_at: f64,
    pub diagnosis_time: f64,
    pub task_id: u64,
    /// Factors the triggering diagnosis flagged.
    pub diagnosis: Vec<Factor>,
    /// Cosine similarity behind a donor choice.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub similarity: Option<f64>,
}

impl MitigationAction {
    pub fn describe(&self) -> String {
        match self.kind {
            MitigationKind::ReassignTask => format!("ReassignTask task {} node {} -> node {}", self.task_id, self.source, self.target),
            k => format!("{k:?} M{} <- M{}", self.source, self.target),
        }
    }
}

/// `None` for mismatched lengths or a zero vector.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = math::sqrt(a.iter().map(|x| x * x).sum());
    let nb = math::sqrt(b.iter().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot / (na * nb))
}

/// The candidate whose vector is most cosine-similar to the afflicted
/// machine's; ties go to the lower machine id and the afflicted machine itself
/// is never chosen.
pub fn select_similar_machine(afflicted: u8, afflicted_vector: &[f64], candidates: &[(u8, Vec<f64>)]) -> Result<(u8, f64)> {
    let mut best: Option<(u8, f64)> = None;
    for (id, v) in candidates {
        if *id == afflicted {
            continue;
        }
        let Some(s) = cosine_similarity(afflicted_vector, v) else { continue };
        best = match best {
            Some((bid, bs)) if bs > s || (bs == s && bid < *id) => Some((bid, bs)),
            _ => Some((*id, s)),
        };
    }
    best.ok_or(Error::NoHealthyCandidate)
}

/// Per-machine routing after mitigation: data substitutions persist until the
/// scenario ends, and replaced pipelines no longer carry singularity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MitigationState {
    pub data_source: BTreeMap<u8, u8>,
    pub pipelines_replaced: BTreeMap<u8, u8>,
    pub actions: Vec<MitigationAction>,
}

impl MitigationState {
    /// Machine whose clean generator now feeds `machine`, if substituted.
    pub fn substitute_for(&self, machine: u8) -> Option<u8> {
        self.data_source.get(&machine).copied()
    }

    pub fn singularity_cleared(&self, machine: u8) -> bool {
        self.pipelines_replaced.contains_key(&machine)
    }
}

fn data_factors(diagnosis: &[Factor]) -> bool {
    diagnosis.iter().any(|f| f.layer() == Layer::Data)
}

pub fn mitigate_data_hazard(
    state: &mut MitigationState,
    afflicted: u8,
    similarity_vectors: &[(u8, Vec<f64>)],
    diagnosis: &[Factor],
    diagnosis_time: f64,
    task_id: u64,
) -> Result<MitigationAction> {
    if !data_factors(diagnosis) {
        return Err(Error::InvalidParameter("data mitigation needs a Y1-Y4 diagnosis".into()));
    }
    let own = vector_of(afflicted, similarity_vectors)?;
    let (donor, s) = select_similar_machine(afflicted, own, similarity_vectors)?;
    state.data_source.insert(afflicted, donor);
    let action = MitigationAction {
        kind: MitigationKind::SubstituteData,
        source: afflicted,
        target: donor,
        issued_at: diagnosis_time,
        diagnosis_time,
        task_id,
        diagnosis: diagnosis.to_vec(),
        similarity: Some(s),
    };
    state.actions.push(action.clone());
    Ok(action)
}

fn vector_of(machine: u8, vectors: &[(u8, Vec<f64>)]) -> Result<&[f64]> {
    vectors
        .iter()
        .find(|(id, _)| *id == machine)
        .map(|(_, v)| v.as_slice())
        .ok_or_else(|| Error::InvalidParameter(format!("no similarity vector for machine {machine}")))
}

/// Copies the donor machine's deployed pipelines onto the afflicted machine.
pub fn mitigate_pipeline_hazard(
    state: &mut MitigationState,
    deployment: &mut Deployment,
    afflicted: u8,
    similarity_vectors: &[(u8, Vec<f64>)],
    diagnosis: &[Factor],
    diagnosis_time: f64,
    task_id: u64,
) -> Result<MitigationAction> {
    if !diagnosis.contains(&Factor::Y5) {
        return Err(Error::InvalidParameter("pipeline mitigation needs a Y5 diagnosis".into()));
    }
    let own = vector_of(afflicted, similarity_vectors)?;
    let (donor, s) = select_similar_machine(afflicted, own, similarity_vectors)?;
    let pipelines = deployment
        .machine(donor)
        .ok_or_else(|| Error::InvalidParameter(format!("donor machine {donor} has no deployment")))?
        .pipelines
        .clone();
    let target = deployment
        .machine_mut(afflicted)
        .ok_or_else(|| Error::InvalidParameter(format!("machine {afflicted} has no deployment")))?;
    target.pipelines = pipelines;
    target.provenance = donor;
    state.pipelines_replaced.insert(afflicted, donor);
    let action = MitigationAction {
        kind: MitigationKind::ReplacePipelines,
        source: afflicted,
        target: donor,
        issued_at: diagnosis_time,
        diagnosis_time,
        task_id,
        diagnosis: diagnosis.to_vec(),
        similarity: Some(s),
    };
    state.actions.push(action.clone());
    Ok(action)
}

/// Uniform seeded choice among nodes that are alive with a healthy channel.
pub fn reassign_task(task_id: u64, attempt: u64, health: &[NodeHealth], seed: u64) -> Result<u8> {
    let ok: Vec<u8> = health.iter().filter(|h| h.alive && h.channel_ok).map(|h| h.node_id).collect();
    if ok.is_empty() {
        return Err(Error::NoHealthyCandidate);
    }
    let mut r = rng::rng_for(seed, &[tag::MITIGATION, task_id, attempt]);
    Ok(ok[rng::below(&mut r, ok.len())])
}
