//! Experiment orchestration: configs, training, evaluation under link
//! failures, sweeps, metrics and the gradient-check suite.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod metrics;
pub mod sweep;
pub mod train;

pub use config::{output_root, AgentConfig, EnvConfig, RunConfig, TrainConfig, PRESETS};
pub use eval::{evaluate, mean_std, EvalOptions, EvalSummary, LinkFailure, Links, Policy};
pub use gradcheck::{run_suite, GradCheckReport, GRAD_TOLERANCE};
pub use metrics::{emit_metrics, read_metrics, MetricsRow, METRICS_HEADER};
pub use sweep::{aggregate, sweep, SweepResult, SweepRow};
pub use train::{pretrain_encoder, run_training, TrainOutcome, METRICS_FILE};
