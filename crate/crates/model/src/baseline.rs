//! Reference forecasters: the last observed value and a weekday/time-of-day
//! table of training means.

use std::ops::Range;

use chrono::{Datelike, NaiveDateTime, Timelike};
use stdn_core::panel::Panel;

use crate::windows::WindowSample;
use crate::{ModelError, Result};

/// Repeats the last input value over the horizon, in the stationarized units
/// of `sample.target`. The last value sits at the anchor, where seasonal and
/// trend parts are zero, so it equals the residual there.
pub fn baseline_current(sample: &WindowSample, w: usize, features: usize, flow: usize) -> Vec<f64> {
    let n = sample.anchors.len();
    let h = sample.target.len() / n.max(1);
    (0..n)
        .flat_map(|i| {
            let last = sample.residual[(i * w + w - 1) * features + flow];
            std::iter::repeat_n(last, h)
        })
        .collect()
}

/// Mean training value per `(sensor, weekday, time-of-day bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeekdayHourly {
    bin_minutes: u32,
    bins: usize,
    /// `(sensor, weekday, bin)` means; NaN where no training value fell.
    table: Vec<f64>,
    /// Per-sensor mean over all training values, used for unseen keys.
    fallback: Vec<f64>,
}

impl WeekdayHourly {
    /// Averages observed values of `feature` over the steps in `range`.
    pub fn fit(p: &Panel, range: Range<usize>, feature: usize, bin_minutes: u32) -> Result<Self> {
        if bin_minutes == 0 || 1440 % bin_minutes != 0 {
            return Err(ModelError::Config(format!("bin of {bin_minutes} min does not divide a day")));
        }
        if range.is_empty() || range.end > p.n_steps() {
            return Err(ModelError::Config(format!("fit range {range:?} outside 0..{}", p.n_steps())));
        }
        let bins = (1440 / bin_minutes) as usize;
        let n = p.n_sensors();
        let mut sums = vec![0.0; n * 7 * bins];
        let mut counts = vec![0usize; n * 7 * bins];
        let mut total = vec![(0.0, 0usize); n];
        for t in range {
            let key = key(p.timestamp(t), bin_minutes, bins);
            for i in 0..n {
                if p.is_observed(i, t, feature) {
                    let v = p.value(i, t, feature);
                    sums[i * 7 * bins + key] += v;
                    counts[i * 7 * bins + key] += 1;
                    total[i].0 += v;
                    total[i].1 += 1;
                }
            }
        }
        if let Some(i) = total.iter().position(|t| t.1 == 0) {
            return Err(ModelError::Data(stdn_core::Error::EmptySeries(format!(
                "sensor {:?} has no training values",
                p.sensors()[i].id
            ))));
        }
        Ok(WeekdayHourly {
            bin_minutes,
            bins,
            table: sums.iter().zip(&counts).map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 }).collect(),
            fallback: total.iter().map(|(s, c)| s / *c as f64).collect(),
        })
    }

    pub fn predict(&self, sensor: usize, at: NaiveDateTime) -> f64 {
        let v = self.table[sensor * 7 * self.bins + key(at, self.bin_minutes, self.bins)];
        if v.is_nan() {
            self.fallback[sensor]
        } else {
            v
        }
    }
}

fn key(at: NaiveDateTime, bin_minutes: u32, bins: usize) -> usize {
    let weekday = at.weekday().num_days_from_monday() as usize;
    let bin = (at.hour() * 60 + at.minute()) / bin_minutes;
    weekday * bins + bin as usize
}
