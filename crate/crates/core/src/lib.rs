//! Semi-supervised ensembles for sensor-based activity recognition, distilled
//! into a single Dirichlet prior network with separable uncertainty.
//!
//! The pipeline: self-supervised pretext training on unlabeled windows,
//! supervised fine-tuning of an ensemble on a small labeled budget, ensemble
//! distribution distillation into one prior network, and an evaluation suite
//! covering accuracy, uncertainty ranking and FGSM robustness.

pub(crate) mod binio;
pub mod adversarial;
pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod models;
pub mod numerics;
pub mod pipeline;
pub mod training;
pub mod transforms;
pub mod uncertainty;

pub use error::{Error, Result};
