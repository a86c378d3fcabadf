//! Training harness for norm-loss experiments: configuration, CIFAR files,
//! the training loop, sweeps, overhead benchmark, numerical checks and
//! CSV metrics.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod checks;
pub mod cifar;
pub mod config;
pub mod error;
pub mod metrics;
pub mod sweep;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use train::{train, TrainReport};
