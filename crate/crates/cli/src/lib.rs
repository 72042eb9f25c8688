//! Command-line pipeline: synthesize or load a panel, decompose, cluster,
//! train, and evaluate with and without injected missing data.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 data error, 4 training
//! divergence.

mod commands;
mod config;
mod error;

pub use commands::{atomic, cmd_cluster, cmd_decompose, cmd_eval, cmd_missing_eval, cmd_synth, cmd_train};
pub use config::{Paths, RunConfig};
pub use error::{CliError, Result, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_OK};
