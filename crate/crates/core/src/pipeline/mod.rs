//! Experiment configuration, end-to-end fitting, model bundles and
//! multi-seed reproduction runs.

mod bundle;
mod config;
mod run;

pub use bundle::{write_query_records, FitLog, FittedModel, ModelBundle, Provenance, QueryRecord, BUNDLE_SCHEMA_VERSION};
pub use config::{DataSource, Experiment, ExperimentConfig, ForestSearch, MetricSettings, Method};
pub use run::{
    align_labels, evaluate, fit_method, fit_pipeline, fit_shared, load_source, prepare_split, run_repro, EvalReport,
    Evaluation, MethodSummary, ReproOutcome, SharedFit,
};
