//! DTW-based fuzzy hierarchical agglomerative clustering of corridor sensors.
//!
//! Elements are points (sensors) and clusters. The closest mergeable pair is
//! merged at every step: single linkage between a point and anything,
//! complete linkage between two clusters, both computed over the pairs present
//! in the neighbor [`DistanceTable`]. Each point is merged structurally once;
//! afterwards it only tracks fuzzy distances to the other clusters, from which
//! the final memberships follow. Merges are restricted to elements whose union
//! is a contiguous run of mainline sensors, so every structural cluster is a
//! corridor segment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use crate::dtw::DistanceTable;
use crate::panel::SensorMeta;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.1;
pub const DEFAULT_FUZZINESS: f64 = 2.0;
pub const DEFAULT_MAX_AVG_SPAN_MILES: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FhcParams {
    /// Merging stops once the mean cluster span would exceed this many miles.
    pub max_avg_span_miles: f64,
    /// Minimum membership for a sensor to count as a cluster member.
    pub threshold: f64,
    /// Fuzziness `m > 1` of the membership update.
    pub fuzziness: f64,
}

impl Default for FhcParams {
    fn default() -> Self {
        FhcParams {
            max_avg_span_miles: DEFAULT_MAX_AVG_SPAN_MILES,
            threshold: DEFAULT_THRESHOLD,
            fuzziness: DEFAULT_FUZZINESS,
        }
    }
}

/// A clustering element. Points order before clusters, then by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Element {
    Point(usize),
    Cluster(usize),
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Element::Point(i) => write!(f, "p{i}"),
            Element::Cluster(c) => write!(f, "c{c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeRecord {
    pub step: usize,
    pub a: Element,
    pub b: Element,
    pub distance: f64,
    /// Id of the cluster the merge created.
    pub created: usize,
}

/// Membership of a point at fuzzy distance `d` to a cluster, given its
/// smallest distance `d_min` to any cluster: `d_min / (d + d_min)`.
pub fn membership_value(d: f64, d_min: f64) -> f64 {
    if d + d_min == 0.0 {
        1.0
    } else {
        d_min / (d + d_min)
    }
}

/// Fuzzy distance update of an assigned point to a cluster.
///
/// With `d_min` the smallest entry of `all_cluster_distances` and
/// `μ = d_min / (d + d_min)`, returns `min((1 - log_m μ) · d, d)`.
pub fn fuzzy_update(d_current: f64, all_cluster_distances: &[f64], m: f64) -> Result<f64> {
    if !(m > 1.0) {
        return Err(Error::Parameter(format!("fuzziness m must exceed 1, got {m}")));
    }
    if !(d_current >= 0.0) || all_cluster_distances.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::Domain("fuzzy distances must be nonnegative".into()));
    }
    let d_min = all_cluster_distances
        .iter()
        .copied()
        .fold(d_current, f64::min);
    if d_current + d_min == 0.0 {
        return Ok(0.0);
    }
    let mu = membership_value(d_current, d_min);
    if mu == 0.0 {
        return Ok(d_current);
    }
    let factor = 1.0 - mu.ln() / m.ln();
    Ok((factor * d_current).min(d_current))
}

/// Fuzzy sensor-to-cluster memberships and the crisp member lists they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMatrix {
    n_sensors: usize,
    memberships: BTreeMap<(usize, usize), f64>,
    clusters: Vec<Vec<usize>>,
    home: Vec<Option<usize>>,
    threshold: f64,
}

impl MembershipMatrix {
    /// Crisp clustering: each listed sensor has membership 1 in its cluster.
    pub fn from_clusters(n_sensors: usize, clusters: Vec<Vec<usize>>) -> Result<Self> {
        let mut memberships = BTreeMap::new();
        let mut home = vec![None; n_sensors];
        for (c, members) in clusters.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Config(format!("cluster {c} has no members")));
            }
            for &s in members {
                if s >= n_sensors {
                    return Err(Error::Config(format!("cluster {c} lists sensor {s} of {n_sensors}")));
                }
                memberships.insert((s, c), 1.0);
                home[s].get_or_insert(c);
            }
        }
        let mut clusters = clusters;
        clusters.iter_mut().for_each(|m| {
            m.sort_unstable();
            m.dedup();
        });
        Ok(MembershipMatrix {
            n_sensors,
            memberships,
            clusters,
            home,
            threshold: DEFAULT_THRESHOLD,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Member lists, each sorted by sensor index.
    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Membership of `sensor` in `cluster`; zero when unrelated.
    pub fn membership(&self, sensor: usize, cluster: usize) -> f64 {
        self.memberships.get(&(sensor, cluster)).copied().unwrap_or(0.0)
    }

    /// The cluster a sensor was merged into, if any.
    pub fn home(&self, sensor: usize) -> Option<usize> {
        self.home[sensor]
    }

    /// Clusters listing `sensor` as a member.
    pub fn clusters_of(&self, sensor: usize) -> Vec<usize> {
        (0..self.clusters.len())
            .filter(|&c| self.clusters[c].binary_search(&sensor).is_ok())
            .collect()
    }

    /// All stored `((sensor, cluster), μ)` entries.
    pub fn entries(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.memberships.iter().map(|(&k, &v)| (k, v))
    }

    /// Geographic span of each cluster's structural members, in miles.
    pub fn home_spans(&self, sensors: &[SensorMeta]) -> Vec<f64> {
        (0..self.clusters.len())
            .map(|c| {
                let posts: Vec<f64> = (0..self.n_sensors)
                    .filter(|&s| self.home[s] == Some(c) && sensors[s].kind.is_mainline())
                    .map(|s| sensors[s].milepost)
                    .collect();
                span(&posts)
            })
            .collect()
    }

    /// Writes `cluster_id,sensor_id,membership` rows for every member.
    pub fn write_csv(&self, sensors: &[SensorMeta], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["cluster_id", "sensor_id", "membership"])?;
        for (c, members) in self.clusters.iter().enumerate() {
            for &s in members {
                w.write_record([
                    c.to_string(),
                    sensors[s].id.clone(),
                    self.membership(s, c).to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a cluster export, resolving sensor ids against `sensors`.
    pub fn read_csv(path: &Path, sensors: &[SensorMeta]) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let index: BTreeMap<&str, usize> = sensors
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        let mut memberships = BTreeMap::new();
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for record in reader.records() {
            let record = record?;
            let c: usize = record[0]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad cluster id {:?}", &record[0])))?;
            let id = record[1].trim();
            let s = *index
                .get(id)
                .ok_or_else(|| Error::UnknownSensor(id.to_string()))?;
            let mu: f64 = record[2]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad membership {:?}", &record[2])))?;
            if !(0.0..=1.0).contains(&mu) {
                return Err(Error::Format(format!("membership {mu} outside [0, 1]")));
            }
            if clusters.len() <= c {
                clusters.resize(c + 1, Vec::new());
            }
            clusters[c].push(s);
            memberships.insert((s, c), mu);
        }
        if let Some(c) = clusters.iter().position(Vec::is_empty) {
            return Err(Error::Format(format!("cluster {c} has no members")));
        }
        clusters.iter_mut().for_each(|m| m.sort_unstable());
        let mut home = vec![None; sensors.len()];
        for (&(s, c), &mu) in &memberships {
            if mu == 1.0 && home[s].is_none() {
                home[s] = Some(c);
            }
        }
        let threshold = memberships.values().copied().fold(1.0, f64::min);
        Ok(MembershipMatrix {
            n_sensors: sensors.len(),
            memberships,
            clusters,
            home,
            threshold,
        })
    }
}

/// Result of [`fhc`]: memberships plus the audit log of merges.
#[derive(Debug, Clone, PartialEq)]
pub struct FhcResult {
    pub memberships: MembershipMatrix,
    pub merges: Vec<MergeRecord>,
}

impl FhcResult {
    /// Writes `step,a,b,distance` rows.
    pub fn write_merge_log(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "a", "b", "distance"])?;
        for m in &self.merges {
            w.write_record([
                m.step.to_string(),
                m.a.to_string(),
                m.b.to_string(),
                m.distance.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn span(posts: &[f64]) -> f64 {
    if posts.is_empty() {
        return 0.0;
    }
    let lo = posts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = posts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

struct State<'a> {
    table: &'a DistanceTable,
    sensors: &'a [SensorMeta],
    fuzziness: f64,
    /// Position of each sensor among mainline sensors.
    ordinal: Vec<Option<usize>>,
    clusters: BTreeMap<usize, Vec<usize>>,
    home: Vec<Option<usize>>,
    mergeable: BTreeMap<(Element, Element), f64>,
    fuzzy: BTreeMap<(usize, usize), f64>,
    next_id: usize,
}

impl State<'_> {
    fn members(&self, e: Element) -> Vec<usize> {
        match e {
            Element::Point(i) => vec![i],
            Element::Cluster(c) => self.clusters[&c].clone(),
        }
    }

    fn single_linkage(&self, point: usize, members: &[usize]) -> Option<f64> {
        members
            .iter()
            .filter_map(|&m| self.table.get(point, m))
            .reduce(f64::min)
    }

    fn complete_linkage(&self, a: &[usize], b: &[usize]) -> Option<f64> {
        a.iter()
            .flat_map(|&i| b.iter().filter_map(move |&j| self.table.get(i, j)))
            .reduce(f64::max)
    }

    fn linkage(&self, a: Element, b: Element) -> Option<f64> {
        match (a, b) {
            (Element::Point(i), other) | (other, Element::Point(i)) => {
                self.single_linkage(i, &self.members(other))
            }
            (Element::Cluster(_), Element::Cluster(_)) => {
                self.complete_linkage(&self.members(a), &self.members(b))
            }
        }
    }

    fn contiguous(&self, a: &[usize], b: &[usize]) -> bool {
        let mut ords: Vec<usize> = a
            .iter()
            .chain(b)
            .map(|&s| self.ordinal[s].expect("clustered sensors are mainline"))
            .collect();
        ords.sort_unstable();
        ords.windows(2).all(|w| w[1] == w[0] + 1)
    }

    fn span_of(&self, members: &[usize]) -> f64 {
        let posts: Vec<f64> = members.iter().map(|&s| self.sensors[s].milepost).collect();
        span(&posts)
    }

    fn active_elements(&self) -> Vec<Element> {
        let points = (0..self.sensors.len())
            .filter(|&i| self.ordinal[i].is_some() && self.home[i].is_none())
            .map(Element::Point);
        let clusters = self.clusters.keys().map(|&c| Element::Cluster(c));
        points.chain(clusters).collect()
    }

    fn closest_pair(&self) -> Option<((Element, Element), f64)> {
        let mut best: Option<((Element, Element), f64)> = None;
        for (&pair, &d) in &self.mergeable {
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((pair, d));
            }
        }
        best
    }

    /// Raw single-linkage distances from `u` to every cluster except its home.
    fn distances_to_clusters(&self, u: usize) -> Vec<(usize, f64)> {
        self.clusters
            .iter()
            .filter(|(&c, _)| self.home[u] != Some(c))
            .filter_map(|(&c, members)| self.single_linkage(u, members).map(|d| (c, d)))
            .collect()
    }

    fn refresh_fuzzy(&mut self, u: usize, only: Option<usize>) -> Result<()> {
        let dists = self.distances_to_clusters(u);
        let all: Vec<f64> = dists.iter().map(|&(_, d)| d).collect();
        for &(c, d) in &dists {
            if only.is_none_or(|o| o == c) {
                let updated = fuzzy_update(d, &all, self.fuzziness)?;
                self.fuzzy.insert((u, c), updated);
            }
        }
        Ok(())
    }

    fn merge(&mut self, a: Element, b: Element, merged: Vec<usize>) -> Result<usize> {
        let id = self.next_id;
        self.next_id += 1;
        let mut removed = Vec::new();
        for e in [a, b] {
            if let Element::Cluster(c) = e {
                self.clusters.remove(&c);
                removed.push(c);
            }
        }
        for &s in &merged {
            self.home[s] = Some(id);
        }
        self.clusters.insert(id, merged.clone());

        self.mergeable
            .retain(|&(x, y), _| x != a && x != b && y != a && y != b);
        let new = Element::Cluster(id);
        for e in self.active_elements() {
            if e == new {
                continue;
            }
            if let Some(d) = self.linkage(e, new) {
                if self.contiguous(&self.members(e), &merged) {
                    self.mergeable.insert((e.min(new), e.max(new)), d);
                }
            }
        }

        self.fuzzy
            .retain(|&(u, c), _| !removed.contains(&c) && !merged.contains(&u));
        let assigned: Vec<usize> = (0..self.sensors.len())
            .filter(|&u| self.home[u].is_some())
            .collect();
        for u in assigned {
            if merged.contains(&u) {
                self.refresh_fuzzy(u, None)?;
            } else {
                self.refresh_fuzzy(u, Some(id))?;
            }
        }
        Ok(id)
    }
}

/// Fuzzy hierarchical clustering of the mainline sensors in `sensors`.
///
/// Mainline sensors never merged (isolated or left over when merging stops)
/// become singleton clusters. Ramps receive no membership here; see
/// [`attach_ramps`].
pub fn fhc(distances: &DistanceTable, sensors: &[SensorMeta], params: FhcParams) -> Result<FhcResult> {
    if !(params.fuzziness > 1.0) {
        return Err(Error::Parameter(format!(
            "fuzziness m must exceed 1, got {}",
            params.fuzziness
        )));
    }
    if !(0.0..=1.0).contains(&params.threshold) {
        return Err(Error::Parameter(format!(
            "membership threshold {} outside [0, 1]",
            params.threshold
        )));
    }
    if !(params.max_avg_span_miles >= 0.0) {
        return Err(Error::Parameter("max average span must be nonnegative".into()));
    }
    let mut ordinal = vec![None; sensors.len()];
    let mut mainline: Vec<usize> = (0..sensors.len())
        .filter(|&i| sensors[i].kind.is_mainline())
        .collect();
    if mainline.is_empty() {
        return Err(Error::Config("no mainline sensors to cluster".into()));
    }
    mainline.sort_by(|&a, &b| sensors[a].milepost.total_cmp(&sensors[b].milepost).then(a.cmp(&b)));
    for (pos, &s) in mainline.iter().enumerate() {
        ordinal[s] = Some(pos);
    }

    let mut state = State {
        table: distances,
        sensors,
        fuzziness: params.fuzziness,
        ordinal,
        clusters: BTreeMap::new(),
        home: vec![None; sensors.len()],
        mergeable: BTreeMap::new(),
        fuzzy: BTreeMap::new(),
        next_id: 0,
    };
    for ((i, j), d) in distances.iter() {
        if i >= sensors.len() || j >= sensors.len() {
            return Err(Error::Shape(format!("distance entry ({i}, {j}) outside {} sensors", sensors.len())));
        }
        if state.ordinal[i].is_some() && state.ordinal[j].is_some() && state.contiguous(&[i], &[j]) {
            state
                .mergeable
                .insert((Element::Point(i), Element::Point(j)), d);
        }
    }

    let mut merges = Vec::new();
    while let Some(((a, b), d)) = state.closest_pair() {
        let mut merged = state.members(a);
        merged.extend(state.members(b));
        merged.sort_unstable();

        let mut spans: Vec<f64> = state
            .clusters
            .iter()
            .filter(|(&c, _)| Element::Cluster(c) != a && Element::Cluster(c) != b)
            .map(|(_, m)| state.span_of(m))
            .collect();
        spans.push(state.span_of(&merged));
        let mean_span = spans.iter().sum::<f64>() / spans.len() as f64;
        if mean_span > params.max_avg_span_miles {
            break;
        }
        let created = state.merge(a, b, merged)?;
        merges.push(MergeRecord {
            step: merges.len() + 1,
            a,
            b,
            distance: d,
            created,
        });
    }

    // Leftover mainline points become singletons.
    for &s in &mainline {
        if state.home[s].is_none() {
            let id = state.next_id;
            state.next_id += 1;
            state.clusters.insert(id, vec![s]);
            state.home[s] = Some(id);
        }
    }
    state.fuzzy.clear();
    for &u in &mainline {
        state.refresh_fuzzy(u, None)?;
    }

    // Final cluster order: by position of the first member along the corridor.
    let mut order: Vec<(usize, usize)> = state
        .clusters
        .iter()
        .map(|(&c, m)| (m.iter().map(|&s| state.ordinal[s].unwrap()).min().unwrap(), c))
        .collect();
    order.sort_unstable();
    let renumber: BTreeMap<usize, usize> = order
        .iter()
        .enumerate()
        .map(|(new, &(_, old))| (old, new))
        .collect();

    let mut memberships = BTreeMap::new();
    let mut home = vec![None; sensors.len()];
    for &u in &mainline {
        let h = renumber[&state.home[u].unwrap()];
        home[u] = Some(h);
        memberships.insert((u, h), 1.0);
        let d_min = state
            .fuzzy
            .range((u, 0)..=(u, usize::MAX))
            .map(|(_, &d)| d)
            .reduce(f64::min);
        if let Some(d_min) = d_min {
            for (&(_, c), &d) in state.fuzzy.range((u, 0)..=(u, usize::MAX)) {
                memberships.insert((u, renumber[&c]), membership_value(d, d_min));
            }
        }
    }
    let mut clusters = vec![Vec::new(); order.len()];
    for (&(s, c), &mu) in &memberships {
        if mu >= params.threshold {
            clusters[c].push(s);
        }
    }
    clusters.iter_mut().for_each(|m| m.sort_unstable());

    Ok(FhcResult {
        memberships: MembershipMatrix {
            n_sensors: sensors.len(),
            memberships,
            clusters,
            home,
            threshold: params.threshold,
        },
        merges,
    })
}

/// Adds every ramp sensor, with membership 1, to the home cluster of the
/// mainline sensor nearest by milepost (lower index on ties).
pub fn attach_ramps(mm: &MembershipMatrix, sensors: &[SensorMeta]) -> Result<MembershipMatrix> {
    if sensors.len() != mm.n_sensors {
        return Err(Error::Shape(format!(
            "membership matrix covers {} sensors, metadata lists {}",
            mm.n_sensors,
            sensors.len()
        )));
    }
    let mainline: Vec<usize> = (0..sensors.len())
        .filter(|&i| sensors[i].kind.is_mainline())
        .collect();
    if mainline.is_empty() {
        return Err(Error::Config("no mainline sensors to attach ramps to".into()));
    }
    let mut out = mm.clone();
    for (r, meta) in sensors.iter().enumerate() {
        if meta.kind.is_mainline() {
            continue;
        }
        let mut nearest = mainline[0];
        for &m in &mainline[1..] {
            let dm = (sensors[m].milepost - meta.milepost).abs();
            let dn = (sensors[nearest].milepost - meta.milepost).abs();
            if dm < dn {
                nearest = m;
            }
        }
        let c = mm.home[nearest].ok_or_else(|| {
            Error::Config(format!("mainline sensor {:?} has no cluster", sensors[nearest].id))
        })?;
        out.memberships.insert((r, c), 1.0);
        out.home[r] = Some(c);
        let members = &mut out.clusters[c];
        if let Err(pos) = members.binary_search(&r) {
            members.insert(pos, r);
        }
    }
    Ok(out)
}

/// Sorted set of sensors that are members of more than one cluster.
pub fn shared_sensors(mm: &MembershipMatrix) -> BTreeSet<usize> {
    (0..mm.n_sensors)
        .filter(|&s| mm.clusters_of(s).len() > 1)
        .collect()
}
