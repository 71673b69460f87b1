use alloc::string::String;
use alloc::vec::Vec;

use crate::domain::Factor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid scenario: {factor} has no level {level}")]
    InvalidScenario { factor: Factor, level: u8 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("class ratio {nonconforming}/{size} unreachable after {attempts} draws")]
    UnreachableRatio { nonconforming: usize, size: usize, attempts: usize },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("only {trained} configurations trained successfully, need {needed}")]
    InsufficientPipelines { trained: usize, needed: usize },
    #[error("no healthy candidate available")]
    NoHealthyCandidate,
    #[error("missing modality: {0}")]
    MissingModality(&'static str),
    #[error("baseline model is untrained")]
    UntrainedBaseline,
    #[error("invalid task state: {0}")]
    InvalidTask(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}
