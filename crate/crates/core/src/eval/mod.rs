//! Forecast evaluation: error metrics, peak/off-peak regimes, missing-data
//! injection, the synthetic corridor generator and report assembly.

mod metrics;
mod missing;
mod report;
mod synth;

pub use metrics::{
    mae, mean_occupancy, residual_mae, rmse, split_peak, split_peak_series, Partition,
    DEFAULT_PEAK_OCCUPANCY,
};
pub use missing::{expected_masked_fraction, inject_missing, MissingConfig, MissingInjection};
pub use report::{
    config_hash, evaluate, EvalReport, ForecastRecord, ForecastSet, Metric, MetricRow, Regime,
};
pub use synth::{fundamental_flow, synth_generate, SynthConfig};
