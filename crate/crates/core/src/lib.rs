//! Resilience toolkit for AI systems in a simulated Manufacturing Industrial Internet.
//!
//! The crate models a three-layer AI system (data, AI pipelines, cyber-physical
//! compute nodes), injects seven classes of hazards into it, diagnoses the root
//! causes with a multimodal multi-head self latent attention (MMSLA) network,
//! applies layer-specific mitigation and scores recovery with temporal and
//! performance resilience metrics.
//!
//! Everything here is a deterministic function of its seeds and runs without
//! `std`; file formats, the CLI and wall-clock timing live in the `mii-resil`
//! companion crate.
#![no_std]

extern crate alloc;

pub mod datagen;
pub mod diagnosis;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod hazard;
pub mod math;
pub mod mitigation;
pub mod nn;
pub mod pipeline;
pub mod resilience;
pub mod rng;
pub mod testbed;

pub use error::{Error, Result};
