//! Downstream evaluation: task heads, land-use classification, socioeconomic
//! distribution mapping, their metrics, and the one-factor sensitivity
//! sweep harness.

mod head;
mod metrics;
mod sweep;
mod train;

pub use head::{BatchTargets, TaskHead, TaskHeadGrads, TaskMode};
pub use metrics::{distribution_metrics, macro_prf, softmax};
pub use sweep::{
    buffer_grid, fraction_grid, lambda_grid, nested_subsets, sweep, write_sweep_csv, SweepAxis,
    SweepInputs, SweepRow,
};
pub use train::{
    load_luc_csv, load_sdm_csv, split_indices, train_luc, train_sdm, write_luc_csv,
    write_sdm_csv, DistributionTarget, EvalReport, LucSample, MetricSummary, SplitSpec,
    TaskHeadConfig,
};
