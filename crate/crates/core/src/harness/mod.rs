//! Experiment plumbing: configuration, pretraining, adaptation runs,
//! multi-mode comparisons and the command entry points.

mod adapt;
pub mod commands;
mod compare;
mod config;
mod pretrain;

pub use adapt::{
    mean, median, read_step_csv, run_adaptation, window_mean, AdaptOptions, AdaptSummary, StepCsvWriter, StepRow,
};
pub use compare::{
    comparison_table, run_comparison, sample_std, write_comparison_csv, ComparePlan, ComparisonRow, RunRecord,
};
pub use config::{Domain, FrameStream, PretrainConfig, RunConfig, SequenceSource};
pub use pretrain::{evaluate, heldout_frames, pretrain, CurvePoint, PretrainSummary};
