//! Experiment orchestration: splits, training, evaluation and reporting.

pub mod metrics;
pub mod split;
pub mod train;
pub mod checkpoint;
pub mod scenario;
