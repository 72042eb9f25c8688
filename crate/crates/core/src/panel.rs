//! Spatial multi-feature panels: sensors × time steps × features.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use chrono::{Duration, NaiveDateTime};

use crate::{Error, Result};

/// Feature names emitted by loop detectors, in panel order.
pub const FEATURES: [&str; 3] = ["flow", "occupancy", "speed"];

pub const FLOW: usize = 0;
pub const OCCUPANCY: usize = 1;
pub const SPEED: usize = 2;

const TIMESTAMP_FORMATS: [&str; 2] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SensorKind {
    Mainline,
    OnRamp,
    OffRamp,
}

impl SensorKind {
    pub fn is_mainline(self) -> bool {
        self == SensorKind::Mainline
    }
}

impl FromStr for SensorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mainline" => Ok(SensorKind::Mainline),
            "on_ramp" => Ok(SensorKind::OnRamp),
            "off_ramp" => Ok(SensorKind::OffRamp),
            other => Err(Error::Format(format!("unknown sensor kind {other:?}"))),
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensorKind::Mainline => "mainline",
            SensorKind::OnRamp => "on_ramp",
            SensorKind::OffRamp => "off_ramp",
        })
    }
}

/// A detector and its location along the corridor.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorMeta {
    pub id: String,
    /// Linear position in miles.
    pub milepost: f64,
    pub kind: SensorKind,
}

impl SensorMeta {
    pub fn mainline(id: impl Into<String>, milepost: f64) -> Self {
        SensorMeta {
            id: id.into(),
            milepost,
            kind: SensorKind::Mainline,
        }
    }
}

/// A dense `(sensor, time, feature)` block of values with an observation mask.
///
/// Values are stored row-major with the feature axis fastest. Unobserved cells
/// hold whatever the producer put there (NaN after loading); only cells with
/// `observed == true` are guaranteed finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    sensors: Vec<SensorMeta>,
    start: NaiveDateTime,
    step_minutes: i64,
    n_steps: usize,
    features: Vec<String>,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl Panel {
    pub fn new(
        sensors: Vec<SensorMeta>,
        start: NaiveDateTime,
        step_minutes: i64,
        n_steps: usize,
        features: Vec<String>,
        values: Vec<f64>,
        observed: Vec<bool>,
    ) -> Result<Self> {
        if step_minutes <= 0 {
            return Err(Error::Format(format!(
                "time step must be positive, got {step_minutes} minutes"
            )));
        }
        let cells = sensors.len() * n_steps * features.len();
        if values.len() != cells || observed.len() != cells {
            return Err(Error::Shape(format!(
                "expected {cells} cells for ({}, {n_steps}, {}), got {} values and {} mask entries",
                sensors.len(),
                features.len(),
                values.len(),
                observed.len()
            )));
        }
        let mut seen = HashMap::new();
        for (i, s) in sensors.iter().enumerate() {
            if !s.milepost.is_finite() {
                return Err(Error::Format(format!("sensor {:?} has non-finite milepost", s.id)));
            }
            if let Some(prev) = seen.insert(s.id.as_str(), i) {
                return Err(Error::Format(format!(
                    "duplicate sensor id {:?} at positions {prev} and {i}",
                    s.id
                )));
            }
        }
        if let Some(pos) = values
            .iter()
            .zip(&observed)
            .position(|(v, &o)| o && !v.is_finite())
        {
            return Err(Error::Format(format!("observed cell {pos} is not finite")));
        }
        Ok(Panel {
            sensors,
            start,
            step_minutes,
            n_steps,
            features,
            values,
            observed,
        })
    }

    /// A fully observed panel with the standard loop-detector features.
    pub fn from_dense(
        sensors: Vec<SensorMeta>,
        start: NaiveDateTime,
        step_minutes: i64,
        n_steps: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let observed = vec![true; values.len()];
        Panel::new(
            sensors,
            start,
            step_minutes,
            n_steps,
            FEATURES.iter().map(|s| s.to_string()).collect(),
            values,
            observed,
        )
    }

    pub fn n_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_sensors(), self.n_steps, self.n_features())
    }

    pub fn sensors(&self) -> &[SensorMeta] {
        &self.sensors
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f == name)
    }

    pub fn step_minutes(&self) -> i64 {
        self.step_minutes
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn timestamp(&self, t: usize) -> NaiveDateTime {
        self.start + Duration::minutes(self.step_minutes * t as i64)
    }

    pub fn time_index(&self) -> Vec<NaiveDateTime> {
        (0..self.n_steps).map(|t| self.timestamp(t)).collect()
    }

    /// Number of steps in one day.
    pub fn steps_per_day(&self) -> usize {
        (1440 / self.step_minutes) as usize
    }

    #[inline]
    pub fn index(&self, sensor: usize, t: usize, feature: usize) -> usize {
        (sensor * self.n_steps + t) * self.features.len() + feature
    }

    #[inline]
    pub fn value(&self, sensor: usize, t: usize, feature: usize) -> f64 {
        self.values[self.index(sensor, t, feature)]
    }

    #[inline]
    pub fn is_observed(&self, sensor: usize, t: usize, feature: usize) -> bool {
        self.observed[self.index(sensor, t, feature)]
    }

    pub fn set(&mut self, sensor: usize, t: usize, feature: usize, value: f64, observed: bool) {
        let idx = self.index(sensor, t, feature);
        self.values[idx] = value;
        self.observed[idx] = observed;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn series(&self, sensor: usize, feature: usize) -> Vec<f64> {
        (0..self.n_steps)
            .map(|t| self.value(sensor, t, feature))
            .collect()
    }

    pub fn observed_fraction(&self, sensor: usize) -> f64 {
        let k = self.n_features();
        let start = sensor * self.n_steps * k;
        let cells = &self.observed[start..start + self.n_steps * k];
        if cells.is_empty() {
            return 0.0;
        }
        cells.iter().filter(|&&o| o).count() as f64 / cells.len() as f64
    }

    /// Panel restricted to the given sensor indices, in the given order.
    pub fn select_sensors(&self, indices: &[usize]) -> Panel {
        let block = self.n_steps * self.n_features();
        let mut values = Vec::with_capacity(indices.len() * block);
        let mut observed = Vec::with_capacity(indices.len() * block);
        for &i in indices {
            values.extend_from_slice(&self.values[i * block..(i + 1) * block]);
            observed.extend_from_slice(&self.observed[i * block..(i + 1) * block]);
        }
        Panel {
            sensors: indices.iter().map(|&i| self.sensors[i].clone()).collect(),
            start: self.start,
            step_minutes: self.step_minutes,
            n_steps: self.n_steps,
            features: self.features.clone(),
            values,
            observed,
        }
    }

    /// Panel restricted to a range of time steps.
    pub fn slice_time(&self, range: Range<usize>) -> Result<Panel> {
        if range.start > range.end || range.end > self.n_steps {
            return Err(Error::Shape(format!(
                "time range {range:?} outside 0..{}",
                self.n_steps
            )));
        }
        let k = self.n_features();
        let len = range.len();
        let mut values = Vec::with_capacity(self.n_sensors() * len * k);
        let mut observed = Vec::with_capacity(self.n_sensors() * len * k);
        for i in 0..self.n_sensors() {
            let a = self.index(i, range.start, 0);
            let b = a + len * k;
            values.extend_from_slice(&self.values[a..b]);
            observed.extend_from_slice(&self.observed[a..b]);
        }
        Ok(Panel {
            sensors: self.sensors.clone(),
            start: self.timestamp(range.start),
            step_minutes: self.step_minutes,
            n_steps: len,
            features: self.features.clone(),
            values,
            observed,
        })
    }

    /// Writes the panel as a data CSV (observed rows only) plus a metadata CSV.
    pub fn write_csv(&self, data_path: &Path, meta_path: &Path) -> Result<()> {
        write_meta(&self.sensors, meta_path)?;

        let file = File::create(data_path).map_err(|e| Error::io(data_path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut header = String::from("sensor_id,timestamp");
        for f in &self.features {
            header.push(',');
            header.push_str(f);
        }
        writeln!(out, "{header}").map_err(|e| Error::io(data_path, e))?;
        let k = self.n_features();
        for (i, s) in self.sensors.iter().enumerate() {
            for t in 0..self.n_steps {
                if !(0..k).all(|f| self.is_observed(i, t, f)) {
                    continue;
                }
                let mut line = format!(
                    "{},{}",
                    s.id,
                    self.timestamp(t).format(TIMESTAMP_FORMATS[0])
                );
                for f in 0..k {
                    line.push(',');
                    line.push_str(&self.value(i, t, f).to_string());
                }
                writeln!(out, "{line}").map_err(|e| Error::io(data_path, e))?;
            }
        }
        out.flush().map_err(|e| Error::io(data_path, e))?;
        Ok(())
    }
}

fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .ok_or_else(|| Error::Format(format!("bad timestamp {s:?}")))
}

fn parse_number(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("bad {what} value {s:?}")))
}

fn check_header(headers: &csv::StringRecord, expected: &[&str], path: &Path) -> Result<()> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Format(format!(
            "{}: expected header {:?}, got {:?}",
            path.display(),
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

/// Writes a sensor metadata CSV (`sensor_id,milepost,kind`).
pub fn write_meta(sensors: &[SensorMeta], meta_path: &Path) -> Result<()> {
    let mut meta = csv::Writer::from_path(meta_path)?;
    meta.write_record(["sensor_id", "milepost", "kind"])?;
    for s in sensors {
        meta.write_record([s.id.clone(), s.milepost.to_string(), s.kind.to_string()])?;
    }
    meta.flush().map_err(|e| Error::io(meta_path, e))
}

/// Reads a sensor metadata CSV (`sensor_id,milepost,kind`).
pub fn load_meta(meta_path: &Path) -> Result<Vec<SensorMeta>> {
    let mut reader = csv::Reader::from_path(meta_path)?;
    check_header(reader.headers()?, &["sensor_id", "milepost", "kind"], meta_path)?;
    let mut sensors = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != 3 {
            return Err(Error::Format(format!(
                "{}: expected 3 fields, got {}",
                meta_path.display(),
                record.len()
            )));
        }
        sensors.push(SensorMeta {
            id: record[0].trim().to_string(),
            milepost: parse_number(&record[1], "milepost")?,
            kind: record[2].parse()?,
        });
    }
    Ok(sensors)
}

/// Loads a panel from a data CSV (`sensor_id,timestamp,flow,occupancy,speed`)
/// and a metadata CSV (`sensor_id,milepost,kind`).
///
/// The time step is the smallest gap between distinct timestamps; every
/// timestamp must sit on that grid. Rows absent from the file become
/// unobserved cells. Sensors are ordered by milepost.
pub fn load_csv(path: &Path, meta_path: &Path) -> Result<Panel> {
    let mut sensors = load_meta(meta_path)?;
    if sensors.is_empty() {
        return Err(Error::EmptyPanel(format!(
            "{} lists no sensors",
            meta_path.display()
        )));
    }
    // Stable: equal mileposts keep metadata order.
    sensors.sort_by(|a, b| a.milepost.total_cmp(&b.milepost));
    let by_id: HashMap<&str, usize> = sensors
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    if by_id.len() != sensors.len() {
        return Err(Error::Format("duplicate sensor ids in metadata".into()));
    }

    let mut reader = csv::Reader::from_path(path)?;
    check_header(
        reader.headers()?,
        &["sensor_id", "timestamp", "flow", "occupancy", "speed"],
        path,
    )?;
    let mut rows: Vec<(usize, NaiveDateTime, [f64; 3])> = Vec::new();
    let mut last_seen: Vec<Option<NaiveDateTime>> = vec![None; sensors.len()];
    for record in reader.records() {
        let record = record?;
        if record.len() != 5 {
            return Err(Error::Format(format!(
                "{}: expected 5 fields, got {}",
                path.display(),
                record.len()
            )));
        }
        let id = record[0].trim();
        let sensor = *by_id
            .get(id)
            .ok_or_else(|| Error::UnknownSensor(id.to_string()))?;
        let ts = parse_timestamp(&record[1])?;
        if let Some(prev) = last_seen[sensor] {
            if ts <= prev {
                return Err(Error::Format(format!(
                    "timestamps for sensor {id:?} are not strictly increasing ({prev} then {ts})"
                )));
            }
        }
        last_seen[sensor] = Some(ts);
        let mut vals = [0.0; 3];
        for (f, v) in vals.iter_mut().enumerate() {
            *v = parse_number(&record[2 + f], FEATURES[f])?;
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "non-finite {} for sensor {id:?} at {ts}",
                    FEATURES[f]
                )));
            }
        }
        rows.push((sensor, ts, vals));
    }
    if rows.is_empty() {
        return Err(Error::EmptyPanel(format!("{} has no rows", path.display())));
    }

    let mut stamps: Vec<NaiveDateTime> = rows.iter().map(|r| r.1).collect();
    stamps.sort();
    stamps.dedup();
    let start = stamps[0];
    let step = stamps
        .windows(2)
        .map(|w| (w[1] - w[0]).num_seconds())
        .min()
        .ok_or_else(|| Error::Format("cannot infer a time step from a single timestamp".into()))?;
    if step <= 0 || step % 60 != 0 {
        return Err(Error::Format(format!(
            "time step of {step} s is not a whole number of minutes"
        )));
    }
    let offset_steps = |ts: NaiveDateTime| -> Result<usize> {
        let secs = (ts - start).num_seconds();
        if secs % step != 0 {
            return Err(Error::Format(format!(
                "timestamp {ts} is off the {}-minute grid",
                step / 60
            )));
        }
        Ok((secs / step) as usize)
    };
    let n_steps = offset_steps(*stamps.last().expect("nonempty"))? + 1;

    let k = FEATURES.len();
    let mut values = vec![f64::NAN; sensors.len() * n_steps * k];
    let mut observed = vec![false; values.len()];
    for (sensor, ts, vals) in rows {
        let t = offset_steps(ts)?;
        let base = (sensor * n_steps + t) * k;
        values[base..base + k].copy_from_slice(&vals);
        observed[base..base + k].iter_mut().for_each(|o| *o = true);
    }
    Panel::new(
        sensors,
        start,
        step / 60,
        n_steps,
        FEATURES.iter().map(|s| s.to_string()).collect(),
        values,
        observed,
    )
}

/// Keeps the sensors whose observed fraction is strictly greater than `min_fraction`.
pub fn filter_complete(p: &Panel, min_fraction: f64) -> Result<Panel> {
    if !(0.0..=1.0).contains(&min_fraction) {
        return Err(Error::Parameter(format!(
            "min_fraction must lie in [0, 1], got {min_fraction}"
        )));
    }
    let keep: Vec<usize> = (0..p.n_sensors())
        .filter(|&i| p.observed_fraction(i) > min_fraction)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyPanel(format!(
            "no sensor has more than {:.1}% observed values",
            min_fraction * 100.0
        )));
    }
    Ok(p.select_sensors(&keep))
}

/// Per-(sensor, feature) min-max statistics of a training span.
///
/// A series that is constant over the span is flagged degenerate and only
/// shifted by its minimum, so the training span maps to 0 and inversion stays
/// exact outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingParams {
    n_sensors: usize,
    n_features: usize,
    min: Vec<f64>,
    max: Vec<f64>,
    degenerate: Vec<bool>,
}

impl ScalingParams {
    pub fn new(n_sensors: usize, n_features: usize, min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        let cells = n_sensors * n_features;
        if min.len() != cells || max.len() != cells {
            return Err(Error::Shape(format!(
                "scaling needs {cells} min/max entries, got {}/{}",
                min.len(),
                max.len()
            )));
        }
        if let Some(j) = (0..cells).find(|&j| !(max[j] >= min[j]) || !min[j].is_finite() || !max[j].is_finite()) {
            return Err(Error::Parameter(format!(
                "scaling entry {j} has min {} > max {}",
                min[j], max[j]
            )));
        }
        let degenerate = (0..cells).map(|j| max[j] == min[j]).collect();
        Ok(ScalingParams {
            n_sensors,
            n_features,
            min,
            max,
            degenerate,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn min(&self, sensor: usize, feature: usize) -> f64 {
        self.min[sensor * self.n_features + feature]
    }

    pub fn max(&self, sensor: usize, feature: usize) -> f64 {
        self.max[sensor * self.n_features + feature]
    }

    /// True when the training span was constant; such series scale to 0.
    pub fn is_degenerate(&self, sensor: usize, feature: usize) -> bool {
        self.degenerate[sensor * self.n_features + feature]
    }

    pub fn any_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }

    #[inline]
    pub fn scale_value(&self, sensor: usize, feature: usize, x: f64) -> f64 {
        let j = sensor * self.n_features + feature;
        if self.degenerate[j] {
            x - self.min[j]
        } else {
            (x - self.min[j]) / (self.max[j] - self.min[j])
        }
    }

    #[inline]
    pub fn invert_value(&self, sensor: usize, feature: usize, x: f64) -> f64 {
        let j = sensor * self.n_features + feature;
        if self.degenerate[j] {
            x + self.min[j]
        } else {
            x * (self.max[j] - self.min[j]) + self.min[j]
        }
    }

    fn check(&self, p: &Panel) -> Result<()> {
        if p.n_sensors() != self.n_sensors || p.n_features() != self.n_features {
            return Err(Error::Shape(format!(
                "scaling fitted for ({}, {}) applied to panel with ({}, {})",
                self.n_sensors,
                self.n_features,
                p.n_sensors(),
                p.n_features()
            )));
        }
        Ok(())
    }

    /// Writes `sensor_index,feature_index,min,max` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sensor", "feature", "min", "max"])?;
        for i in 0..self.n_sensors {
            for f in 0..self.n_features {
                w.write_record([
                    i.to_string(),
                    f.to_string(),
                    self.min(i, f).to_string(),
                    self.max(i, f).to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        check_header(reader.headers()?, &["sensor", "feature", "min", "max"], path)?;
        let mut entries = Vec::new();
        for record in reader.records() {
            let record = record?;
            let idx = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad index {s:?}")))
            };
            entries.push((
                idx(&record[0])?,
                idx(&record[1])?,
                parse_number(&record[2], "min")?,
                parse_number(&record[3], "max")?,
            ));
        }
        let n_sensors = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
        let n_features = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
        if entries.len() != n_sensors * n_features {
            return Err(Error::Format(format!(
                "{}: incomplete scaling table",
                path.display()
            )));
        }
        let mut min = vec![0.0; entries.len()];
        let mut max = vec![0.0; entries.len()];
        for (i, f, lo, hi) in entries {
            min[i * n_features + f] = lo;
            max[i * n_features + f] = hi;
        }
        ScalingParams::new(n_sensors, n_features, min, max)
    }
}

/// Fits min-max scaling on the observed cells of the time steps in `train_range`.
pub fn fit_scale(p: &Panel, train_range: Range<usize>) -> Result<ScalingParams> {
    if train_range.is_empty() || train_range.end > p.n_steps() {
        return Err(Error::Parameter(format!(
            "training range {train_range:?} must be nonempty and within 0..{}",
            p.n_steps()
        )));
    }
    let (n, _, k) = p.shape();
    let mut min = vec![f64::INFINITY; n * k];
    let mut max = vec![f64::NEG_INFINITY; n * k];
    for i in 0..n {
        for t in train_range.clone() {
            for f in 0..k {
                if p.is_observed(i, t, f) {
                    let v = p.value(i, t, f);
                    let j = i * k + f;
                    min[j] = min[j].min(v);
                    max[j] = max[j].max(v);
                }
            }
        }
    }
    if let Some(j) = min.iter().position(|m| !m.is_finite()) {
        return Err(Error::EmptySeries(format!(
            "sensor {:?} feature {:?} has no observed training values",
            p.sensors()[j / k].id,
            p.features()[j % k]
        )));
    }
    ScalingParams::new(n, k, min, max)
}

/// Maps observed training values into `[0, 1]`. Unobserved cells are mapped
/// too, so imputed values stay on the same scale.
pub fn apply_scale(p: &Panel, s: &ScalingParams) -> Result<Panel> {
    s.check(p)?;
    let mut out = p.clone();
    map_cells(&mut out, |i, f, x| s.scale_value(i, f, x));
    Ok(out)
}

pub fn invert_scale(p: &Panel, s: &ScalingParams) -> Result<Panel> {
    s.check(p)?;
    let mut out = p.clone();
    map_cells(&mut out, |i, f, x| s.invert_value(i, f, x));
    Ok(out)
}

fn map_cells(p: &mut Panel, op: impl Fn(usize, usize, f64) -> f64) {
    let (n, steps, k) = p.shape();
    for i in 0..n {
        for t in 0..steps {
            for f in 0..k {
                let idx = p.index(i, t, f);
                p.values[idx] = op(i, f, p.values[idx]);
            }
        }
    }
}

/// Fills unobserved cells with the last observed value of the same series;
/// leading gaps take the first observed value. The mask is left untouched.
pub fn impute_forward(p: &Panel) -> Result<Panel> {
    let (n, steps, k) = p.shape();
    let mut out = p.clone();
    for i in 0..n {
        for f in 0..k {
            let first = (0..steps).find(|&t| p.is_observed(i, t, f)).ok_or_else(|| {
                Error::EmptySeries(format!(
                    "sensor {:?} feature {:?}",
                    p.sensors()[i].id,
                    p.features()[f]
                ))
            })?;
            let mut last = p.value(i, first, f);
            for t in 0..steps {
                let idx = out.index(i, t, f);
                if out.observed[idx] {
                    last = out.values[idx];
                } else {
                    out.values[idx] = last;
                }
            }
        }
    }
    Ok(out)
}
