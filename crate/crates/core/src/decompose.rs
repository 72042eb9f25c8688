//! Classical additive seasonal/trend/residual decomposition and the window
//! stationarization used around the forecaster.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use chrono::Timelike;

use crate::panel::Panel;
use crate::{Error, Result};

/// Additive split `series = seasonal + trend + residual`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub seasonal: Vec<f64>,
    pub trend: Vec<f64>,
    pub residual: Vec<f64>,
    pub period: usize,
}

impl Decomposition {
    pub fn len(&self) -> usize {
        self.trend.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trend.is_empty()
    }

    /// One full cycle of the seasonal component, phase 0 first.
    pub fn seasonal_profile(&self) -> &[f64] {
        &self.seasonal[..self.period]
    }
}

/// Centered moving average of width `period`, with half weights at both ends
/// when the period is even. Entries closer than `period / 2` to either end are
/// `None`.
fn centered_moving_average(series: &[f64], period: usize) -> Vec<Option<f64>> {
    let n = series.len();
    let half = period / 2;
    let mut out = vec![None; n];
    if n < 2 * half + 1 {
        return out;
    }
    let p = period as f64;
    for t in half..n - half {
        let v = if period % 2 == 0 {
            let inner: f64 = series[t + 1 - half..t + half].iter().sum();
            (0.5 * series[t - half] + inner + 0.5 * series[t + half]) / p
        } else {
            series[t - half..=t + half].iter().sum::<f64>() / p
        };
        out[t] = Some(v);
    }
    out
}

/// Decomposes a series with a daily (or any fixed) period.
///
/// The trend is a centered moving average. The seasonal profile is the phase
/// mean of the detrended series, centered to sum to zero. Where the moving
/// average is undefined (the first and last `period / 2` points) the trend
/// repeats the nearest defined value and the residual absorbs the difference,
/// so `seasonal + trend + residual` reproduces the input everywhere.
pub fn decompose_additive(series: &[f64], period: usize) -> Result<Decomposition> {
    if period < 2 {
        return Err(Error::Parameter(format!("period must be at least 2, got {period}")));
    }
    if series.len() < 2 * period {
        return Err(Error::InsufficientData(format!(
            "series of length {} is shorter than two periods of {period}",
            series.len()
        )));
    }
    if let Some(t) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("series value at {t} is not finite")));
    }
    let n = series.len();
    let ma = centered_moving_average(series, period);

    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for (t, m) in ma.iter().enumerate() {
        if let Some(m) = m {
            sums[t % period] += series[t] - m;
            counts[t % period] += 1;
        }
    }
    let mut profile: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    let mean = profile.iter().sum::<f64>() / period as f64;
    profile.iter_mut().for_each(|s| *s -= mean);

    let first = ma.iter().position(Option::is_some).expect("length checked");
    let last = ma.iter().rposition(Option::is_some).expect("length checked");
    let trend: Vec<f64> = (0..n)
        .map(|t| ma[t.clamp(first, last)].expect("clamped into defined range"))
        .collect();
    let seasonal: Vec<f64> = (0..n).map(|t| profile[t % period]).collect();
    let residual: Vec<f64> = (0..n).map(|t| series[t] - trend[t] - seasonal[t]).collect();
    Ok(Decomposition {
        seasonal,
        trend,
        residual,
        period,
    })
}

/// Decompositions of every `(sensor, feature)` series of a panel, stored in the
/// panel's `(sensor, time, feature)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDecomposition {
    n_sensors: usize,
    n_steps: usize,
    n_features: usize,
    period: usize,
    seasonal: Vec<f64>,
    trend: Vec<f64>,
    residual: Vec<f64>,
}

/// Which additive component to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Seasonal,
    Trend,
    Residual,
}

impl PanelDecomposition {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_sensors, self.n_steps, self.n_features)
    }

    pub fn period(&self) -> usize {
        self.period
    }

    #[inline]
    fn index(&self, sensor: usize, t: usize, feature: usize) -> usize {
        (sensor * self.n_steps + t) * self.n_features + feature
    }

    #[inline]
    pub fn seasonal(&self, sensor: usize, t: usize, feature: usize) -> f64 {
        self.seasonal[self.index(sensor, t, feature)]
    }

    #[inline]
    pub fn trend(&self, sensor: usize, t: usize, feature: usize) -> f64 {
        self.trend[self.index(sensor, t, feature)]
    }

    #[inline]
    pub fn residual(&self, sensor: usize, t: usize, feature: usize) -> f64 {
        self.residual[self.index(sensor, t, feature)]
    }

    pub fn get(&self, c: Component, sensor: usize, t: usize, feature: usize) -> f64 {
        match c {
            Component::Seasonal => self.seasonal(sensor, t, feature),
            Component::Trend => self.trend(sensor, t, feature),
            Component::Residual => self.residual(sensor, t, feature),
        }
    }

    /// Raw `(sensor, time, feature)` block of one component.
    pub fn block(&self, c: Component) -> &[f64] {
        match c {
            Component::Seasonal => &self.seasonal,
            Component::Trend => &self.trend,
            Component::Residual => &self.residual,
        }
    }

    /// The decomposition of a single series.
    pub fn series(&self, sensor: usize, feature: usize) -> Decomposition {
        let pick = |c| (0..self.n_steps).map(|t| self.get(c, sensor, t, feature)).collect();
        Decomposition {
            seasonal: pick(Component::Seasonal),
            trend: pick(Component::Trend),
            residual: pick(Component::Residual),
            period: self.period,
        }
    }

    /// Writes `t,S,T,R` rows of one sensor and feature.
    pub fn write_sensor_csv(&self, sensor: usize, feature: usize, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "t,S,T,R").map_err(io)?;
        for t in 0..self.n_steps {
            writeln!(
                out,
                "{t},{},{},{}",
                self.seasonal(sensor, t, feature),
                self.trend(sensor, t, feature),
                self.residual(sensor, t, feature)
            )
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Decomposes every series of a panel. All cells must hold finite values, so
/// impute gaps first.
pub fn decompose_panel(p: &Panel, period: usize) -> Result<PanelDecomposition> {
    let (n, steps, k) = p.shape();
    let cells = n * steps * k;
    let mut out = PanelDecomposition {
        n_sensors: n,
        n_steps: steps,
        n_features: k,
        period,
        seasonal: vec![0.0; cells],
        trend: vec![0.0; cells],
        residual: vec![0.0; cells],
    };
    for i in 0..n {
        for f in 0..k {
            let d = decompose_additive(&p.series(i, f), period).map_err(|e| match e {
                Error::Domain(msg) => Error::Domain(format!(
                    "sensor {:?} feature {:?}: {msg}; impute gaps before decomposing",
                    p.sensors()[i].id,
                    p.features()[f]
                )),
                other => other,
            })?;
            for t in 0..steps {
                let idx = out.index(i, t, f);
                out.seasonal[idx] = d.seasonal[t];
                out.trend[idx] = d.trend[t];
                out.residual[idx] = d.residual[t];
            }
        }
    }
    Ok(out)
}

/// Daily seasonal profiles of every `(sensor, feature)` series, indexed by
/// time-of-day phase (phase 0 starts at midnight).
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalProfile {
    n_sensors: usize,
    n_features: usize,
    step_minutes: i64,
    /// `(sensor, feature, phase)` layout.
    values: Vec<f64>,
}

impl SeasonalProfile {
    pub fn new(n_sensors: usize, n_features: usize, step_minutes: i64, values: Vec<f64>) -> Result<Self> {
        if step_minutes <= 0 || 1440 % step_minutes != 0 {
            return Err(Error::Parameter(format!("step of {step_minutes} min does not divide a day")));
        }
        let period = (1440 / step_minutes) as usize;
        if values.len() != n_sensors * n_features * period {
            return Err(Error::Shape(format!(
                "profile needs {} values, got {}",
                n_sensors * n_features * period,
                values.len()
            )));
        }
        Ok(SeasonalProfile { n_sensors, n_features, step_minutes, values })
    }

    pub fn period(&self) -> usize {
        (1440 / self.step_minutes) as usize
    }

    pub fn step_minutes(&self) -> i64 {
        self.step_minutes
    }

    pub fn value(&self, sensor: usize, feature: usize, phase: usize) -> f64 {
        self.values[(sensor * self.n_features + feature) * self.period() + phase]
    }

    /// Phase of step `t` of a panel, from its time of day.
    pub fn phase(&self, p: &Panel, t: usize) -> usize {
        let ts = p.timestamp(t);
        let minutes = ts.time().num_seconds_from_midnight() as i64 / 60;
        (minutes / self.step_minutes) as usize % self.period()
    }

    /// Writes `sensor,feature,phase,value` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sensor", "feature", "phase", "value"])?;
        let period = self.period();
        for (j, v) in self.values.iter().enumerate() {
            let cell = j / period;
            w.write_record([
                (cell / self.n_features).to_string(),
                (cell % self.n_features).to_string(),
                (j % period).to_string(),
                format!("{v:?}"),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, n_sensors: usize, n_features: usize, step_minutes: i64) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut values = Vec::new();
        let period = (1440 / step_minutes.max(1)) as usize;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| -> Result<&str> {
                rec.get(i).ok_or_else(|| Error::Format(format!("profile row {row} is short")))
            };
            let expect = [row / period / n_features.max(1), row / period % n_features.max(1), row % period];
            for (i, e) in expect.iter().enumerate() {
                if field(i)?.parse::<usize>().ok() != Some(*e) {
                    return Err(Error::Format(format!("profile row {row} out of order")));
                }
            }
            let v = field(3)?;
            values.push(v.parse().map_err(|_| Error::Format(format!("bad profile value {v:?}")))?);
        }
        SeasonalProfile::new(n_sensors, n_features, step_minutes, values)
    }
}

/// Fits daily seasonal profiles with the classical decomposition over the
/// steps in `fit_range`.
pub fn fit_seasonal_profile(p: &Panel, fit_range: Range<usize>) -> Result<SeasonalProfile> {
    if fit_range.end > p.n_steps() || fit_range.is_empty() {
        return Err(Error::Parameter(format!("fit range {fit_range:?} outside 0..{}", p.n_steps())));
    }
    let (n, _, k) = p.shape();
    let step = p.step_minutes();
    let mut out = SeasonalProfile::new(n, k, step, vec![0.0; n * k * p.steps_per_day()])?;
    let period = out.period();
    let first_phase = out.phase(p, fit_range.start);
    for i in 0..n {
        for f in 0..k {
            let series = &p.series(i, f)[fit_range.clone()];
            let d = decompose_additive(series, period)?;
            for (j, s) in d.seasonal_profile().iter().enumerate() {
                out.values[(i * k + f) * period + (first_phase + j) % period] = *s;
            }
        }
    }
    Ok(out)
}

/// Decomposition that only looks backwards: the seasonal part comes from a
/// fitted profile and the trend at `t` is the mean of the deseasonalized series
/// over the last period up to and including `t` (fewer points at the start).
/// Components at `t` never depend on values after `t`.
pub fn decompose_causal(p: &Panel, profile: &SeasonalProfile) -> Result<PanelDecomposition> {
    let (n, steps, k) = p.shape();
    if profile.n_sensors != n || profile.n_features != k || profile.step_minutes != p.step_minutes() {
        return Err(Error::Shape(format!(
            "profile for {} sensors × {} features at {} min applied to panel {:?} at {} min",
            profile.n_sensors,
            profile.n_features,
            profile.step_minutes,
            p.shape(),
            p.step_minutes()
        )));
    }
    let period = profile.period();
    let cells = n * steps * k;
    let mut out = PanelDecomposition {
        n_sensors: n,
        n_steps: steps,
        n_features: k,
        period,
        seasonal: vec![0.0; cells],
        trend: vec![0.0; cells],
        residual: vec![0.0; cells],
    };
    let phases: Vec<usize> = (0..steps).map(|t| profile.phase(p, t)).collect();
    for i in 0..n {
        for f in 0..k {
            let mut window = std::collections::VecDeque::with_capacity(period);
            let mut sum = 0.0;
            for (t, &phase) in phases.iter().enumerate() {
                let x = p.value(i, t, f);
                if !x.is_finite() {
                    return Err(Error::Domain(format!(
                        "sensor {:?} feature {:?} step {t} is not finite; impute gaps first",
                        p.sensors()[i].id,
                        p.features()[f]
                    )));
                }
                let s = profile.value(i, f, phase);
                window.push_back(x - s);
                sum += x - s;
                if window.len() > period {
                    sum -= window.pop_front().expect("nonempty");
                }
                // recompute occasionally so rounding does not accumulate
                if t % period == 0 {
                    sum = window.iter().sum();
                }
                let trend = sum / window.len() as f64;
                let idx = out.index(i, t, f);
                out.seasonal[idx] = s;
                out.trend[idx] = trend;
                out.residual[idx] = x - s - trend;
            }
        }
    }
    Ok(out)
}

/// Seasonal and trend values at a window's last input step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Anchor {
    pub seasonal: f64,
    pub trend: f64,
}

impl Anchor {
    pub fn level(&self) -> f64 {
        self.seasonal + self.trend
    }
}

/// A window made shift-free around its anchor step.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryWindow {
    pub seasonal: Vec<f64>,
    pub trend: Vec<f64>,
    pub residual: Vec<f64>,
    pub anchor: Anchor,
}

/// Subtracts the anchor-step seasonal and trend values from their windows.
/// The residual window passes through unchanged.
pub fn stationarize_window(
    seasonal: &[f64],
    trend: &[f64],
    residual: &[f64],
    anchor_index: usize,
) -> Result<StationaryWindow> {
    if seasonal.len() != trend.len() || trend.len() != residual.len() {
        return Err(Error::Shape(format!(
            "window lengths differ: S {}, T {}, R {}",
            seasonal.len(),
            trend.len(),
            residual.len()
        )));
    }
    if anchor_index >= seasonal.len() {
        return Err(Error::Shape(format!(
            "anchor index {anchor_index} outside window of length {}",
            seasonal.len()
        )));
    }
    let anchor = Anchor {
        seasonal: seasonal[anchor_index],
        trend: trend[anchor_index],
    };
    Ok(StationaryWindow {
        seasonal: seasonal.iter().map(|s| s - anchor.seasonal).collect(),
        trend: trend.iter().map(|t| t - anchor.trend).collect(),
        residual: residual.to_vec(),
        anchor,
    })
}

/// Adds each anchor level back to its `horizon`-long slice of `pred`.
///
/// `pred` holds one block of `horizon` values per anchor, anchors in order.
pub fn recover_forecast(pred: &[f64], anchors: &[Anchor], horizon: usize) -> Result<Vec<f64>> {
    if horizon == 0 || pred.len() != anchors.len() * horizon {
        return Err(Error::Shape(format!(
            "{} predictions do not split into {} anchors × horizon {horizon}",
            pred.len(),
            anchors.len()
        )));
    }
    Ok(pred
        .chunks(horizon)
        .zip(anchors)
        .flat_map(|(block, a)| block.iter().map(move |v| v + a.level()))
        .collect())
}
