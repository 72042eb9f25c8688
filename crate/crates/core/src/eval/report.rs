use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::metrics::{mae, rmse, Partition};
use crate::{Error, Result};

/// One forecast value in original units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastRecord {
    /// Panel step being predicted.
    pub target_step: usize,
    pub sensor: usize,
    /// 1-based horizon.
    pub horizon: usize,
    pub truth: f64,
    pub predicted: f64,
    /// Seasonal plus trend level at the target step.
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForecastSet {
    pub records: Vec<ForecastRecord>,
}

impl ForecastSet {
    pub fn horizons(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.records.iter().map(|r| r.horizon).collect();
        set.into_iter().collect()
    }

    fn pairs(&self, keep: impl Fn(&ForecastRecord) -> bool, residual: bool) -> (Vec<f64>, Vec<f64>) {
        self.records
            .iter()
            .filter(|r| keep(r))
            .map(|r| {
                let shift = if residual { r.level } else { 0.0 };
                (r.truth - shift, r.predicted - shift)
            })
            .unzip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Mae,
    Rmse,
    ResidualMae,
    MissingMaeDelta,
    MissingRmseDelta,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Rmse => "rmse",
            Metric::ResidualMae => "residual_mae",
            Metric::MissingMaeDelta => "missing_mae_delta",
            Metric::MissingRmseDelta => "missing_rmse_delta",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        [
            Metric::Mae,
            Metric::Rmse,
            Metric::ResidualMae,
            Metric::MissingMaeDelta,
            Metric::MissingRmseDelta,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::Format(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Regime {
    All,
    Peak,
    OffPeak,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::All => "all",
            Regime::Peak => "peak",
            Regime::OffPeak => "off_peak",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Regime::All),
            "peak" => Ok(Regime::Peak),
            "off_peak" => Ok(Regime::OffPeak),
            _ => Err(Error::Format(format!("unknown regime {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub metric: Metric,
    /// `None` pools every horizon.
    pub horizon: Option<usize>,
    pub regime: Regime,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub seed: u64,
    pub config_hash: String,
    pub rows: Vec<MetricRow>,
}

/// Scores a forecast set per horizon and pooled, overall and split by regime.
/// Regimes with no records are omitted.
pub fn evaluate(
    model: &str,
    seed: u64,
    config_hash: &str,
    set: &ForecastSet,
    regimes: &Partition,
) -> Result<EvalReport> {
    if set.records.is_empty() {
        return Err(Error::Domain("no forecasts to evaluate".into()));
    }
    let mut rows = Vec::new();
    let mut scopes: Vec<Option<usize>> = set.horizons().into_iter().map(Some).collect();
    scopes.push(None);
    for h in scopes {
        let in_h = |r: &ForecastRecord| h.is_none_or(|h| r.horizon == h);
        for regime in [Regime::All, Regime::Peak, Regime::OffPeak] {
            let keep = |r: &ForecastRecord| {
                in_h(r)
                    && match regime {
                        Regime::All => true,
                        Regime::Peak => regimes.is_peak(r.target_step),
                        Regime::OffPeak => !regimes.is_peak(r.target_step),
                    }
            };
            let (y, yhat) = set.pairs(keep, false);
            if y.is_empty() {
                continue;
            }
            let (ry, ryhat) = set.pairs(keep, true);
            rows.push(MetricRow { metric: Metric::Mae, horizon: h, regime, value: mae(&y, &yhat)? });
            rows.push(MetricRow { metric: Metric::Rmse, horizon: h, regime, value: rmse(&y, &yhat)? });
            rows.push(MetricRow {
                metric: Metric::ResidualMae,
                horizon: h,
                regime,
                value: mae(&ry, &ryhat)?,
            });
        }
    }
    Ok(EvalReport {
        model: model.to_string(),
        seed,
        config_hash: config_hash.to_string(),
        rows,
    })
}

impl EvalReport {
    pub fn get(&self, metric: Metric, horizon: Option<usize>, regime: Regime) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.horizon == horizon && r.regime == regime)
            .map(|r| r.value)
    }

    /// Appends `missing − clean` deltas of MAE and RMSE for every scope both share.
    pub fn add_missing_deltas(&mut self, clean: &EvalReport, missing: &EvalReport) {
        for (metric, delta) in [(Metric::Mae, Metric::MissingMaeDelta), (Metric::Rmse, Metric::MissingRmseDelta)] {
            for row in clean.rows.iter().filter(|r| r.metric == metric) {
                if let Some(v) = missing.get(metric, row.horizon, row.regime) {
                    self.rows.push(MetricRow {
                        metric: delta,
                        horizon: row.horizon,
                        regime: row.regime,
                        value: v - row.value,
                    });
                }
            }
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["model", "seed", "config_hash", "metric", "horizon", "regime", "value"])?;
        for r in &self.rows {
            let h = r.horizon.map_or_else(|| "all".to_string(), |h| h.to_string());
            w.write_record([
                self.model.as_str(),
                &self.seed.to_string(),
                &self.config_hash,
                r.metric.name(),
                &h,
                r.regime.name(),
                &format!("{:.17e}", r.value),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut report = EvalReport {
            model: String::new(),
            seed: 0,
            config_hash: String::new(),
            rows: Vec::new(),
        };
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 7 {
                return Err(Error::Format(format!("report row has {} fields", rec.len())));
            }
            report.model = rec[0].to_string();
            report.seed = rec[1]
                .parse()
                .map_err(|_| Error::Format(format!("bad seed {:?}", &rec[1])))?;
            report.config_hash = rec[2].to_string();
            let horizon = match &rec[4] {
                "all" => None,
                h => Some(h.parse().map_err(|_| Error::Format(format!("bad horizon {h:?}")))?),
            };
            report.rows.push(MetricRow {
                metric: Metric::parse(&rec[3])?,
                horizon,
                regime: Regime::parse(&rec[5])?,
                value: rec[6]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad value {:?}", &rec[6])))?,
            });
        }
        Ok(report)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model {}  seed {}  config {}", self.model, self.seed, self.config_hash)?;
        writeln!(f, "{:<20} {:>7} {:>9} {:>14}", "metric", "horizon", "regime", "value")?;
        for r in &self.rows {
            let h = r.horizon.map_or_else(|| "all".to_string(), |h| h.to_string());
            writeln!(f, "{:<20} {:>7} {:>9} {:>14.6}", r.metric.name(), h, r.regime.name(), r.value)?;
        }
        Ok(())
    }
}

/// Short stable digest of a resolved configuration text.
pub fn config_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> ForecastSet {
        let mut records = Vec::new();
        for t in 0..10 {
            for h in 1..=2 {
                records.push(ForecastRecord {
                    target_step: t,
                    sensor: 0,
                    horizon: h,
                    truth: t as f64,
                    predicted: t as f64 + if t % 3 == 0 { 2.0 } else { -0.5 } * h as f64,
                    level: 0.25 * t as f64,
                });
            }
        }
        ForecastSet { records }
    }

    #[test]
    fn rmse_dominates_mae_and_regimes_split() {
        let part = Partition { peak: vec![0, 3, 6, 9], off_peak: vec![1, 2, 4, 5, 7, 8] };
        let r = evaluate("m", 1, "x", &set(), &part).unwrap();
        for h in [Some(1), Some(2), None] {
            for g in [Regime::All, Regime::Peak, Regime::OffPeak] {
                let m = r.get(Metric::Mae, h, g).unwrap();
                assert!(r.get(Metric::Rmse, h, g).unwrap() >= m);
                assert!((r.get(Metric::ResidualMae, h, g).unwrap() - m).abs() < 1e-12);
            }
        }
        // peak steps are exactly the ones with error 2h
        assert_eq!(r.get(Metric::Mae, Some(2), Regime::Peak), Some(4.0));
        assert_eq!(r.get(Metric::Mae, Some(1), Regime::OffPeak), Some(0.5));
    }

    #[test]
    fn csv_round_trip_and_deltas() {
        let part = Partition { peak: vec![], off_peak: (0..10).collect() };
        let clean = evaluate("m", 3, "abc", &set(), &part).unwrap();
        assert!(clean.get(Metric::Mae, None, Regime::Peak).is_none());
        let mut worse = set();
        for r in &mut worse.records {
            r.predicted += 1.0;
        }
        let missing = evaluate("m", 3, "abc", &worse, &part).unwrap();
        let mut out = clean.clone();
        out.add_missing_deltas(&clean, &missing);
        assert!(out.get(Metric::MissingMaeDelta, None, Regime::All).unwrap() > 0.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        out.write_csv(&path).unwrap();
        assert_eq!(EvalReport::read_csv(&path).unwrap(), out);
        assert!(out.to_string().contains("missing_mae_delta"));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash("a=1"), config_hash("a=1"));
        assert_ne!(config_hash("a=1"), config_hash("a=2"));
        assert_eq!(config_hash("").len(), 16);
    }
}
