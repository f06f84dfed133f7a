//! Experiment orchestration: config files, resumable runs, evaluation and
//! result tables. The `unirag` binary wraps these as subcommands.

pub mod config;
pub mod evaluate;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use config::{ExperimentConfig, Overrides, RetrieverKind};
pub use evaluate::{evaluate_run, evaluate_summary, EvalMode, EvalResult, EvalSummary, FeatureSources};
pub use manifest::{ManifestEntry, RunManifest};
pub use pipeline::{dry_run, prepare, run_experiment, RunControl, RunOutcome, RunnerError};
pub use report::{render_jsonl, render_table, rows_for, ReportRow};
