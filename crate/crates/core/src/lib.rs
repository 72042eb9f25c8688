//! Data handling and analysis primitives for spatial time-series forecasting.
//!
//! The pipeline these modules support:
//!
//! 1. [`panel`]: load a sensor × time × feature panel, drop incomplete sensors,
//!    min-max scale, forward-fill gaps.
//! 2. [`decompose`]: split every series into seasonal, trend and residual parts
//!    and stationarize forecast windows around their last input step.
//! 3. [`dtw`]: multi-dimensional dynamic time warping over rolling windows of
//!    residuals between geographically neighboring sensors.
//! 4. [`cluster`]: fuzzy hierarchical agglomerative clustering of sensors over
//!    those distances.
//! 5. [`eval`]: error metrics, peak/off-peak splits, missing-block injection and
//!    a fundamental-diagram traffic generator for synthetic corridors.

pub mod cluster;
pub mod decompose;
pub mod dtw;
mod error;
pub mod eval;
pub mod panel;

pub use error::{Error, Result};
