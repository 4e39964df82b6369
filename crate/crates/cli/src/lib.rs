//! Experiment orchestration for the `smartkge` binary: configuration,
//! multi-run training, grid search, evaluation and reports.

pub mod commands;
pub mod config;
pub mod summary;

pub use commands::{cmd_analyze, cmd_eval, cmd_grid, cmd_train, GridCell, TrainOutput};
pub use config::ExperimentConfig;
pub use summary::{MetricSummary, Summary};

use smartkge::Error;

/// Process exit status for an error: 1 configuration, 2 data or I/O,
/// 3 numerical divergence.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Parse { .. } | Error::Data(_) | Error::VocabMismatch { .. } | Error::Io { .. } => 2,
        Error::Divergence(_) => 3,
    }
}
