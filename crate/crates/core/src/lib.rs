//! Behavioral test harness for speech emotion recognition models.
//!
//! The harness treats the model as a black box: it only needs predictions,
//! either from prediction files or from a subprocess. Tests fall into three
//! categories:
//!
//! * correctness: agreement with gold labels ([`metrics`]),
//! * fairness: disparities between protected groups, with thresholds
//!   calibrated against random models ([`fairness_sim`]),
//! * robustness: stability under audio perturbations ([`perturb`]).
//!
//! [`suite`] holds the test registry and evaluation, [`adapters`] runs models,
//! and [`report`] renders results.

#[cfg(feature = "process")]
pub mod adapters;
pub mod fairness_sim;
pub mod manifest;
pub mod metrics;
pub mod perturb;
pub mod report;
pub mod suite;
pub mod types;

pub use types::{AttrValue, BinSpec, DatasetManifest, GroupPartition, Label, PredictionSet, Sample, Task, UnitValue};
