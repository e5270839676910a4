//! Seeded experiments: configuration, runs, result tables, charts and diagnostics.

pub mod config;
pub mod diagnose;
pub mod experiment;
pub mod plot;

pub use config::{Baselines, ExperimentConfig, ModelSpec, Preset};
pub use diagnose::{diagnose_factorization, diagnose_params, DiagnoseReport, LayerDiagnostics};
pub use experiment::{quantile, run_experiment, ExperimentReport, ResultRow, ResultTable, TestSet, TrainingSummary};
pub use plot::emit_plots;
