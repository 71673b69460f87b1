//! Root-cause diagnosis: the MMSLA network and its single-head ablation, the
//! spectral-feature baseline and the cyber-physical failure classifier.

mod cyber;
mod model;
mod spectral;
mod train;

pub use cyber::{
    classify_cyberphysical, cyber_features, rule_verdict, true_verdict, verdict_f1, CyberClassifier, CyberVerdict,
    CYBER_FEATURES,
};
pub use model::{fuse_latents, sorted_row_order, AttentionHead, DiagnosisInput, LatentNoise, LossTerms, MmslaModel};
pub use spectral::{channel_spectrum, dft_magnitudes, extract_spectral_features, ChannelSpectrum, SPECTRAL_DIM};
pub use train::{
    baseline_features, cross_validate_baseline, cross_validate_mmsla, cross_validate_with, fold_assignment,
    predict_diagnosis, train_mmsla, CvReport, DiagnosisConfig, DiagnosisSample, FactorScore, HeadMode, InputScaler,
    SpectralBaseline, TrainedDiagnoser,
};

/// Factors diagnosed from `(X^P, X^R)`: Y1 to Y5.
pub const DIAGNOSED_FACTORS: usize = 5;
pub const LATENT_DIM: usize = 16;
pub const HIDDEN_DIM: usize = 32;
pub const FUSED_DIM: usize = 2 * LATENT_DIM;
pub const PERF_INPUT: usize = crate::domain::PERF_DIM;
pub const TRACE_INPUT: usize = crate::domain::RUNTIME_CHANNELS;
