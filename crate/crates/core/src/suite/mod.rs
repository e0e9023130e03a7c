//! Test registry, evaluation and aggregation.

pub mod aggregate;
pub mod evaluate;
pub mod groups;
pub mod ranges;
pub mod registry;
pub mod thresholds;

use std::path::PathBuf;

pub use aggregate::{aggregate, Aggregate, TestSummary};
pub use evaluate::{
    evaluate_test, run_suite, EvalContext, Instance, IrEntry, PredictionSource, StaticSource, TestResult,
    DEFAULT_BALANCE_TARGET,
};
pub use registry::{
    load_registry, parse_registry, Calibration, Category, Comparison, Condition, Grouping, MetricId, Prerequisites,
    Registry, TestSpec,
};
pub use thresholds::{builtin_table, calibration_table, resolve_fairness_threshold, truth_model_for};

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("{origin}: row {row}: {message}")]
    Registry { origin: String, row: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
