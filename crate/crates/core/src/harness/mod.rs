//! Experiment specs, runners and report generation.

pub mod jobs;
pub mod plot;
pub mod runners;
pub mod spec;

pub use runners::{
    cmd_ablate, cmd_baseline, cmd_condense, cmd_evaluate, cmd_generalize, cmd_report, cmd_timing, evaluate_set,
    produce_set, run_method, AblationReport, EvalContext, EvalMeta, GeneralizeReport, RunRecord, SummaryReport,
    TimingPoint, TimingReport, TimingSeries, ABLATION_GRID,
};
pub use spec::{apply_overrides, load_spec, spec_from_json, EvalConfig, ExperimentSpec, Method, TimingConfig, ToyData};
pub use jobs::{run_job, ApiError, JobRequest, JobState, JobStatus, SpecInput};
