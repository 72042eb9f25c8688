//! Multi-dimensional dynamic time warping and rolling-window distance tables.

use std::collections::BTreeMap;
use std::path::Path;

use crate::panel::{Panel, SensorMeta};
use crate::{Error, Result};

/// A sequence of `dims`-dimensional observations, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    dims: usize,
    data: Vec<f64>,
}

impl Sequence {
    pub fn new(dims: usize, data: Vec<f64>) -> Result<Self> {
        if dims == 0 || data.len() % dims != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form {dims}-dimensional observations",
                data.len()
            )));
        }
        Ok(Sequence { dims, data })
    }

    pub fn univariate(values: &[f64]) -> Self {
        Sequence {
            dims: 1,
            data: values.to_vec(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dims = rows.first().map_or(1, Vec::len);
        if rows.iter().any(|r| r.len() != dims) {
            return Err(Error::Shape("rows of unequal dimension".into()));
        }
        Sequence::new(dims, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    /// Per-dimension z-normalization; constant dimensions map to zero.
    pub fn z_normalized(&self) -> Sequence {
        let n = self.len() as f64;
        let mut data = self.data.clone();
        for k in 0..self.dims {
            let mean = (0..self.len()).map(|i| self.row(i)[k]).sum::<f64>() / n;
            let var = (0..self.len())
                .map(|i| (self.row(i)[k] - mean).powi(2))
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            for i in 0..self.len() {
                let v = &mut data[i * self.dims + k];
                *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
            }
        }
        Sequence {
            dims: self.dims,
            data,
        }
    }
}

/// L1 distance between two observations.
#[inline]
pub fn delta(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// DTW distance with the L1 local cost, no warping window.
///
/// `C[1,1] = δ(x1, y1)`, the first row and column accumulate, and
/// `C[i,j] = min(C[i-1,j], C[i,j-1], C[i-1,j-1]) + δ(xi, yj)`. Returns `C[N,M]`.
pub fn dtw_distance(x: &Sequence, y: &Sequence, normalize: bool) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Domain("DTW needs two nonempty sequences".into()));
    }
    if x.dims() != y.dims() {
        return Err(Error::Shape(format!(
            "DTW dimension mismatch: {} vs {}",
            x.dims(),
            y.dims()
        )));
    }
    let (x, y) = if normalize {
        (x.z_normalized(), y.z_normalized())
    } else {
        (x.clone(), y.clone())
    };
    let m = y.len();
    let mut prev = vec![0.0; m];
    let mut cur = vec![0.0; m];
    prev[0] = delta(x.row(0), y.row(0));
    for j in 1..m {
        prev[j] = prev[j - 1] + delta(x.row(0), y.row(j));
    }
    for i in 1..x.len() {
        cur[0] = prev[0] + delta(x.row(i), y.row(0));
        for j in 1..m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = best + delta(x.row(i), y.row(j));
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Symmetric sparse distances between sensor pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistanceTable {
    entries: BTreeMap<(usize, usize), f64>,
    window_count: usize,
}

impl DistanceTable {
    pub fn new(window_count: usize) -> Self {
        DistanceTable {
            entries: BTreeMap::new(),
            window_count,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = ((usize, usize), f64)>) -> Result<Self> {
        let mut table = DistanceTable::new(1);
        for ((i, j), d) in pairs {
            table.insert(i, j, d)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, i: usize, j: usize, d: f64) -> Result<()> {
        if i == j {
            return Err(Error::Domain(format!("self-distance entry for {i}")));
        }
        if !(d >= 0.0) || !d.is_finite() {
            return Err(Error::Domain(format!("distance {d} for ({i}, {j}) is not a finite nonnegative value")));
        }
        self.entries.insert((i.min(j), i.max(j)), d);
        Ok(())
    }

    /// Distance between two sensors; `Some(0)` on the diagonal, `None` for
    /// pairs outside the neighbor set.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return Some(0.0);
        }
        self.entries.get(&(i.min(j), i.max(j))).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn window_count(&self) -> usize {
        self.window_count
    }

    /// Entries as `((i, j), d)` with `i < j`, in ascending pair order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    pub fn mean(&self) -> Option<f64> {
        if self.entries.is_empty() {
            None
        } else {
            Some(self.entries.values().sum::<f64>() / self.entries.len() as f64)
        }
    }

    /// Writes `i,j,distance` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["i", "j", "distance"])?;
        for ((i, j), d) in self.iter() {
            w.write_record([i.to_string(), j.to_string(), d.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut table = DistanceTable::new(1);
        for record in reader.records() {
            let record = record?;
            let parse_idx = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad index {s:?}")))
            };
            let d = record[2]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad distance {:?}", &record[2])))?;
            table.insert(parse_idx(&record[0])?, parse_idx(&record[1])?, d)?;
        }
        Ok(table)
    }
}

/// Pairs `(i, j)`, `i < j`, of mainline sensors within `radius_miles` of each other.
pub fn neighbor_pairs(sensors: &[SensorMeta], radius_miles: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..sensors.len() {
        if !sensors[i].kind.is_mainline() {
            continue;
        }
        for j in i + 1..sensors.len() {
            if sensors[j].kind.is_mainline()
                && (sensors[i].milepost - sensors[j].milepost).abs() <= radius_miles
            {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Start offsets of the rolling windows over a series of `len` steps.
pub fn window_starts(len: usize, window_len: usize, stride: usize) -> Vec<usize> {
    if window_len == 0 || stride == 0 || window_len > len {
        return Vec::new();
    }
    (0..=len - window_len).step_by(stride).collect()
}

/// Flags the windows whose mean of `signal` exceeds the `quantile` of `signal`.
///
/// `signal` is typically corridor-mean occupancy over the training span.
pub fn high_interaction_windows(
    signal: &[f64],
    window_len: usize,
    stride: usize,
    quantile: f64,
) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::Parameter(format!("quantile {quantile} outside [0, 1]")));
    }
    if signal.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted = signal.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = quantile * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let threshold = sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64);
    Ok(window_starts(signal.len(), window_len, stride)
        .into_iter()
        .map(|s| signal[s..s + window_len].iter().sum::<f64>() / window_len as f64 > threshold)
        .collect())
}

/// A read-only `(sensor, time, feature)` block, such as one decomposition component.
#[derive(Debug, Clone, Copy)]
pub struct SeriesBlock<'a> {
    pub data: &'a [f64],
    pub n_sensors: usize,
    pub n_steps: usize,
    pub n_features: usize,
}

impl<'a> SeriesBlock<'a> {
    pub fn new(data: &'a [f64], n_sensors: usize, n_steps: usize, n_features: usize) -> Result<Self> {
        if data.len() != n_sensors * n_steps * n_features {
            return Err(Error::Shape(format!(
                "{} values do not fill ({n_sensors}, {n_steps}, {n_features})",
                data.len()
            )));
        }
        Ok(SeriesBlock {
            data,
            n_sensors,
            n_steps,
            n_features,
        })
    }

    /// Multivariate window `[start, start + len)` of one sensor.
    pub fn window(&self, sensor: usize, start: usize, len: usize) -> Sequence {
        let a = (sensor * self.n_steps + start) * self.n_features;
        Sequence {
            dims: self.n_features,
            data: self.data[a..a + len * self.n_features].to_vec(),
        }
    }
}

/// Averages windowed DTW distances for every neighbor pair.
///
/// Only windows flagged in `active` contribute; when none is flagged every
/// window is used instead.
pub fn rolling_dtw_matrix(
    residuals: SeriesBlock<'_>,
    neighbors: &[(usize, usize)],
    window_len: usize,
    stride: usize,
    active: &[bool],
    normalize: bool,
) -> Result<DistanceTable> {
    if window_len == 0 || window_len > residuals.n_steps {
        return Err(Error::Parameter(format!(
            "window length {window_len} must lie in 1..={}",
            residuals.n_steps
        )));
    }
    if stride == 0 {
        return Err(Error::Parameter("stride must be positive".into()));
    }
    let starts = window_starts(residuals.n_steps, window_len, stride);
    if active.len() != starts.len() {
        return Err(Error::Shape(format!(
            "{} activity flags for {} windows",
            active.len(),
            starts.len()
        )));
    }
    let mut used: Vec<usize> = starts
        .iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .map(|(&s, _)| s)
        .collect();
    if used.is_empty() {
        used = starts;
    }
    let mut table = DistanceTable::new(used.len());
    for &(i, j) in neighbors {
        if i >= residuals.n_sensors || j >= residuals.n_sensors || i == j {
            return Err(Error::Parameter(format!("invalid neighbor pair ({i}, {j})")));
        }
        let mut total = 0.0;
        for &s in &used {
            let a = residuals.window(i, s, window_len);
            let b = residuals.window(j, s, window_len);
            total += dtw_distance(&a, &b, normalize)?;
        }
        table.insert(i, j, total / used.len() as f64)?;
    }
    Ok(table)
}

/// Settings for building the clustering distance table from a panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RollingParams {
    /// Mainline sensors within this many miles are neighbors.
    pub radius_miles: f64,
    /// Window length in minutes.
    pub window_minutes: i64,
    /// Stride in minutes.
    pub stride_minutes: i64,
    /// Windows whose mean occupancy exceeds this quantile are active.
    pub activity_quantile: f64,
    /// Z-normalize each residual series over the whole span before windowing.
    pub normalize: bool,
}

impl Default for RollingParams {
    fn default() -> Self {
        RollingParams {
            radius_miles: 3.0,
            window_minutes: 120,
            stride_minutes: 120,
            activity_quantile: 0.75,
            normalize: true,
        }
    }
}

/// Neighbor distance table over the residuals of a decomposed panel, using the
/// corridor-mean occupancy of `p` to pick high-interaction windows.
pub fn panel_distance_table(
    p: &Panel,
    residual: &[f64],
    params: &RollingParams,
) -> Result<DistanceTable> {
    let (n, steps, k) = p.shape();
    let step = p.step_minutes();
    if params.window_minutes <= 0 || params.window_minutes % step != 0 {
        return Err(Error::Parameter(format!(
            "window of {} minutes is not a positive multiple of the {step}-minute step",
            params.window_minutes
        )));
    }
    if params.stride_minutes <= 0 || params.stride_minutes % step != 0 {
        return Err(Error::Parameter(format!(
            "stride of {} minutes is not a positive multiple of the {step}-minute step",
            params.stride_minutes
        )));
    }
    let window_len = (params.window_minutes / step) as usize;
    let stride = (params.stride_minutes / step) as usize;
    SeriesBlock::new(residual, n, steps, k)?;
    let normalized;
    let data = if params.normalize {
        normalized = zscore_series(residual, n, steps, k);
        &normalized
    } else {
        residual
    };
    let block = SeriesBlock::new(data, n, steps, k)?;
    let occupancy: Vec<f64> = crate::eval::mean_occupancy(p)
        .into_iter()
        .map(|o| if o.is_nan() { 0.0 } else { o })
        .collect();
    let active = high_interaction_windows(&occupancy, window_len, stride, params.activity_quantile)?;
    let neighbors = neighbor_pairs(p.sensors(), params.radius_miles);
    rolling_dtw_matrix(block, &neighbors, window_len, stride, &active, false)
}

/// Z-normalizes every `(sensor, feature)` series of a block; constant series map to 0.
pub fn zscore_series(data: &[f64], n_sensors: usize, n_steps: usize, n_features: usize) -> Vec<f64> {
    let mut out = data.to_vec();
    for i in 0..n_sensors {
        for f in 0..n_features {
            let idx = |t: usize| (i * n_steps + t) * n_features + f;
            let mean = (0..n_steps).map(|t| data[idx(t)]).sum::<f64>() / n_steps as f64;
            let var = (0..n_steps).map(|t| (data[idx(t)] - mean).powi(2)).sum::<f64>() / n_steps as f64;
            let sd = var.sqrt();
            for t in 0..n_steps {
                out[idx(t)] = if sd > 0.0 { (data[idx(t)] - mean) / sd } else { 0.0 };
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sequences() {
        let x = Sequence::univariate(&[0.0, 1.0, 2.0]);
        assert_eq!(dtw_distance(&x, &x, false).unwrap(), 0.0);
    }

    #[test]
    fn small_cases() {
        // Only alignment of [0,1] with [1]: (0,1) then (1,1) -> 1 + 0.
        let x = Sequence::univariate(&[0.0, 1.0]);
        let y = Sequence::univariate(&[1.0]);
        assert_eq!(dtw_distance(&x, &y, false).unwrap(), 1.0);

        let x = Sequence::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let y = Sequence::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(dtw_distance(&x, &y, false).unwrap(), 2.0);
    }

    #[test]
    fn errors() {
        let e = Sequence::univariate(&[]);
        let x = Sequence::univariate(&[1.0]);
        assert!(matches!(dtw_distance(&e, &x, false), Err(Error::Domain(_))));
        let y = Sequence::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(dtw_distance(&x, &y, false), Err(Error::Shape(_))));
    }

    #[test]
    fn normalization_removes_offset_and_scale() {
        let x = Sequence::univariate(&[1.0, 2.0, 3.0, 2.0]);
        let y = Sequence::univariate(&[11.0, 13.0, 15.0, 13.0]);
        assert!(dtw_distance(&x, &y, false).unwrap() > 10.0);
        assert!(dtw_distance(&x, &y, true).unwrap() < 1e-12);
        let c = Sequence::univariate(&[4.0; 3]).z_normalized();
        assert_eq!(c, Sequence::univariate(&[0.0; 3]));
    }

    #[test]
    fn neighbor_radius() {
        let mut s: Vec<SensorMeta> = [0.0, 1.0, 2.5, 6.0]
            .iter()
            .enumerate()
            .map(|(i, &m)| SensorMeta::mainline(format!("{i}"), m))
            .collect();
        assert_eq!(neighbor_pairs(&s, 2.0), vec![(0, 1), (1, 2)]);
        s[1].kind = crate::panel::SensorKind::OnRamp;
        assert_eq!(neighbor_pairs(&s, 2.0), Vec::<(usize, usize)>::new());
        assert_eq!(neighbor_pairs(&s, 3.0), vec![(0, 2)]);
    }

    #[test]
    fn activity_flags_and_fallback() {
        let signal = [0.0, 0.0, 10.0, 10.0, 0.0, 0.0];
        let flags = high_interaction_windows(&signal, 2, 2, 0.5).unwrap();
        assert_eq!(flags, vec![false, true, false]);

        let data: Vec<f64> = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let block = SeriesBlock::new(&data, 2, 6, 1).unwrap();
        let all = rolling_dtw_matrix(block, &[(0, 1)], 2, 2, &[false; 3], false).unwrap();
        let some = rolling_dtw_matrix(block, &[(0, 1)], 2, 2, &[true, false, false], false).unwrap();
        assert_eq!(all.window_count(), 3);
        assert_eq!(some.window_count(), 1);
        assert_eq!(some.get(0, 1), Some(2.0));
        assert!(rolling_dtw_matrix(block, &[(0, 1)], 2, 2, &[true], false).is_err());
        let empty = rolling_dtw_matrix(block, &[], 2, 2, &[true; 3], false).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn table_symmetry() {
        let t = DistanceTable::from_pairs([((2, 1), 3.0)]).unwrap();
        assert_eq!(t.get(1, 2), Some(3.0));
        assert_eq!(t.get(2, 1), Some(3.0));
        assert_eq!(t.get(1, 1), Some(0.0));
        assert_eq!(t.get(0, 1), None);
        assert!(DistanceTable::from_pairs([((0, 1), -1.0)]).is_err());
    }
}
