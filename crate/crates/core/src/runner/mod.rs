//! Experiment orchestration: run configuration, the offline training loop,
//! online fine-tuning, Cartesian sweeps, and report generation.
//!
//! Every run writes a self-contained directory:
//!
//! ```text
//! <out>/
//!   metrics.csv       one row per logging interval (see [`METRICS_HEADER`])
//!   summary.json      final/best evaluation, status, halt reason, config echo
//!   final.ckpt.json   parameters at the last completed step
//!   best.ckpt.json    parameters at the best evaluation so far
//! ```
//!
//! Runs are deterministic: identical config (including seed) produces
//! byte-identical metrics files and checkpoints.

pub mod config;
pub mod finetune;
pub mod metrics;
pub mod report;
pub mod svg;
pub mod sweep;
pub mod train;

pub use config::{RunConfig, DEFAULT_AWR_WEIGHT_CLIP, LOG_INTERVAL};
pub use finetune::finetune_online;
pub use metrics::{read_metrics, MetricsRow, MetricsWriter, METRICS_HEADER};
pub use report::{report, REPORT_TEXT_FILE};
pub use sweep::{
    best_over_alpha, read_sweep_summary, sweep, AggregateRow, SweepAxes, SweepRow, SweepSpec,
    SWEEP_BEST_FILE, SWEEP_SUMMARY_FILE,
};
pub use train::{
    evaluate_checkpoint, train, EvalRecord, RunStatus, RunSummary, BEST_CHECKPOINT_FILE,
    FINAL_CHECKPOINT_FILE, METRICS_FILE, SUMMARY_FILE,
};
