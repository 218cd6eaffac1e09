//! Metrics, synthetic datasets, experiment orchestration and plots.

pub mod data;
pub mod experiment;
pub mod metrics;
pub mod plot;

pub use experiment::{
    fit_model, model_samples, run_experiment, ArchPreset, BoxStats, ClassReport, ExperimentConfig, ExperimentReport, ModelSpec,
    Scenario, ScenarioOutcome, SUMMARY_CSV_HEADER,
};
pub use metrics::{metrics_at, micro_average, point_metrics, roc, spearman, PointMetrics, RocReport};
pub use plot::{emit_plots, write_plots, PlotFile};
