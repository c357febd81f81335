//! Longitudinal mixed-effects modeling of tumor features.
//!
//! The crate covers the whole pipeline: feature extraction from voxel masks
//! and displacement fields ([`features`]), grouped longitudinal data
//! ([`cohort`]), fixed and mixed model fitting ([`model`]), forecasting for
//! new patients ([`predictor`]), leave-one-out evaluation ([`evaluation`])
//! and synthetic cohorts with known ground truth ([`simulator`]).

pub mod cohort;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod model;
pub mod predictor;
pub mod simulator;

pub use error::{Error, Result};

/// Version stamped into every JSON report.
pub const SCHEMA_VERSION: u32 = 1;
