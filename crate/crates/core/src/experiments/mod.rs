//! Data generators for the built-in experiments, tabular ingestion,
//! seed sweeps with aggregated metrics, and rate-slope checks.

mod data;
mod problems;
mod registry;
mod runner;
mod stats;

pub use data::{
    load_csv_dataset, parse_csv_dataset, synthetic_housing_csv, CsvDataset, HOUSING_COLUMNS, HOUSING_TARGET,
};
pub use problems::*;
pub use registry::{builtin, registry, BuiltinExperiment};
pub use runner::{
    curve_csv, curve_points, lambda_schedule, run_experiment, Aggregate, EvalConfig, ExperimentConfig,
    ExperimentOutcome, ExperimentReport, Fit, GridSpec, MetricSummary, Problem, ReportRow, METRICS,
};
pub use stats::{mean, ridge_oracle, rate_slope, std_dev};
