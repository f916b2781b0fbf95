//! Hyperspectral tissue-classification pipeline.
//!
//! The processing chain mirrors an intra-operative HSI workflow at desk
//! scale: reflectance calibration, SAM-metric SLIC tiling with quality
//! filtration, classical and channel-compressing neural classifiers,
//! gradient-attribution channel selection, and deep-ensemble inference
//! with an "unknown" rejection class. Synthetic phantom scenes provide
//! ground truth for end-to-end verification.

pub mod attribution;
pub mod classical;
pub mod configfile;
pub mod cube;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod slic;
pub mod spectral;

pub use error::{HsiError, Result};
