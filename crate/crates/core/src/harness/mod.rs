//! Scenario configuration, pipeline orchestration, oracle evaluation and
//! report emission.

mod evaluate;
mod pipeline;
mod report;
mod scenario;

pub use evaluate::{corresponding_points, evaluate, sigma_table, Evaluation, MetricErrors, OverlapCheck, SigmaRecord};
pub use pipeline::{
    catalog_source, make_functional, metric_config, reconstruct, run_forward, run_pipeline, slice_integrals,
    ForwardArtifacts, Reconstruction, StageTiming,
};
pub use report::{write_report, write_scenario, write_timings, EvaluationSummary, ParameterEcho, ReconstructionReport};
pub use scenario::{Mode, Scenario};
