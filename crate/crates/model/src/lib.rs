//! Cluster-based CNN-LSTM traffic forecaster with optional denoising
//! autoencoder heads, plus the two reference baselines.
//!
//! Windows are built from a scaled panel and a causal seasonal/trend/residual
//! decomposition. Residuals feed one time convolution per sensor cluster,
//! trends join after a dense re-projection, a ConvLSTM stack runs over the
//! window, and the seasonal slice enters before the output layer. Predictions
//! are relative to the anchor level and are shifted back and unscaled for
//! scoring.

mod baseline;
mod config;
mod error;
mod forecaster;
mod network;
mod pipeline;
mod train;
mod windows;

pub use baseline::{baseline_current, WeekdayHourly};
pub use config::{activation_name, parse_activation, parse_pairs, ForecasterConfig};
pub use error::{ModelError, Result};
pub use forecaster::{
    cluster_blocks, pretrain_dae, records_from_raw, records_from_stationary, test_anchors, train, train_anchors,
    train_steps, Forecaster, Prepared, TrainOutcome, WindowData,
};
pub use pipeline::{cluster_sensors, Clustering};
pub use network::{build_dae, build_forecaster, scaled_dae_widths, Network};
pub use train::{dataset_loss, fit, predict, BlockData, Dataset, EpochRecord, FitOptions, History, DIVERGENCE_FACTOR, DIVERGENCE_PATIENCE};
pub use windows::{anchor_range, batch_inputs, make_windows, window_at, WindowSample, WindowShape};
