//! End-to-end orchestration: configuration, pretraining, compression,
//! federated rounds, fusion, evaluation and reporting.

mod config;
mod pipeline;
mod report;

pub use config::{BackboneSpec, EvalSpec, PublicSpec, RunConfig, RunSeeds, ScenarioSpec, SEED_ENV};
pub use pipeline::{
    backbone_from_params, build_clients, compare_methods, compare_prepared, compress, federate, prepare,
    pretrained_backbone, run_pipeline, scenario_tasks, ClientEval, ComparisonRow, Federated, PipelineRun, Prepared,
    Provenance, RunArtifacts, RunReport,
};
pub use report::{
    comparison_csv, comparison_markdown, emit_report, metrics_csv, report_markdown, save_run, ReportFormat,
    METRICS_CSV_HEADER,
};

pub use crate::checkpoint::{load_checkpoint, save_checkpoint};
