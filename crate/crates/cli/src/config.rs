//! Flat `section.key = value` run configuration.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use stdn_core::cluster::FhcParams;
use stdn_core::dtw::RollingParams;
use stdn_core::eval::{MissingConfig, SynthConfig, DEFAULT_PEAK_OCCUPANCY};
use stdn_model::{parse_pairs, ForecasterConfig};

use crate::{CliError, Result};

/// Input and output locations. Command-line flags take precedence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub clusters: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// Every tunable of a run. Keys outside the known set are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub synth_sensors: usize,
    pub synth_days: usize,
    /// Sensors observed in fewer than this fraction of rows are dropped.
    pub min_fraction: f64,
    /// Decomposition period in steps; 0 means one day.
    pub period: usize,
    pub rolling: RollingParams,
    pub fhc: FhcParams,
    pub model: ForecasterConfig,
    pub peak_occupancy: f64,
    pub weekday_bin_minutes: u32,
    pub missing: MissingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            paths: Paths::default(),
            synth: SynthConfig::default(),
            synth_sensors: 24,
            synth_days: 56,
            min_fraction: 0.9,
            period: 0,
            rolling: RollingParams::default(),
            fhc: FhcParams::default(),
            model: ForecasterConfig::desk(),
            peak_occupancy: DEFAULT_PEAK_OCCUPANCY,
            weekday_bin_minutes: 60,
            missing: MissingConfig::default(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl RunConfig {
    /// Parses config text over the defaults. `model.*` keys (including
    /// `model.preset`) go to the forecaster config, preset first.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut model = String::new();
        for (k, v) in parse_pairs(text)? {
            match k.strip_prefix("model.") {
                Some(rest) => writeln!(model, "{rest} = {v}").expect("string write"),
                None => cfg.set(&k, &v)?,
            }
        }
        cfg.model = ForecasterConfig::parse(&model)?;
        cfg.synth.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                RunConfig::parse(&text)
            }
        }
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.synth;
        let path = || Some(PathBuf::from(v));
        match key {
            "seed" => self.seed = Some(num(key, v)?),
            "path.data" => self.paths.data = path(),
            "path.meta" => self.paths.meta = path(),
            "path.out" => self.paths.out = path(),
            "path.clusters" => self.paths.clusters = path(),
            "path.model" => self.paths.model = path(),
            "path.report" => self.paths.report = path(),
            "synth.sensors" => self.synth_sensors = num(key, v)?,
            "synth.days" => self.synth_days = num(key, v)?,
            "synth.step_minutes" => s.step_minutes = num(key, v)?,
            "synth.spacing_miles" => s.spacing_miles = num(key, v)?,
            "synth.free_speed" => s.free_speed = num(key, v)?,
            "synth.wave_speed" => s.wave_speed = num(key, v)?,
            "synth.max_density" => s.max_density = num(key, v)?,
            "synth.segment_jitter" => s.segment_jitter = num(key, v)?,
            "synth.base_occupancy" => s.base_occupancy = num(key, v)?,
            "synth.am_peak" => s.am_peak = num(key, v)?,
            "synth.pm_peak" => s.pm_peak = num(key, v)?,
            "synth.weekend_factor" => s.weekend_factor = num(key, v)?,
            "synth.weekly_amplitude" => s.weekly_amplitude = num(key, v)?,
            "synth.pulses_per_day" => s.pulses_per_day = num(key, v)?,
            "synth.pulse_amplitude" => s.pulse_amplitude = num(key, v)?,
            "synth.pulse_steps" => s.pulse_steps = num(key, v)?,
            "synth.propagation_delay_steps" => s.propagation_delay_steps = num(key, v)?,
            "synth.propagation_hops" => s.propagation_hops = num(key, v)?,
            "synth.propagation_decay" => s.propagation_decay = num(key, v)?,
            "synth.noise_sd" => s.noise_sd = num(key, v)?,
            "synth.noise_ar" => s.noise_ar = num(key, v)?,
            "data.min_fraction" => self.min_fraction = num(key, v)?,
            "decompose.period" => self.period = num(key, v)?,
            "cluster.radius_miles" => self.rolling.radius_miles = num(key, v)?,
            "cluster.window_minutes" => self.rolling.window_minutes = num(key, v)?,
            "cluster.stride_minutes" => self.rolling.stride_minutes = num(key, v)?,
            "cluster.activity_quantile" => self.rolling.activity_quantile = num(key, v)?,
            "cluster.normalize" => self.rolling.normalize = flag(key, v)?,
            "cluster.max_avg_span_miles" => self.fhc.max_avg_span_miles = num(key, v)?,
            "cluster.threshold" => self.fhc.threshold = num(key, v)?,
            "cluster.fuzziness" => self.fhc.fuzziness = num(key, v)?,
            "eval.peak_occupancy" => self.peak_occupancy = num(key, v)?,
            "eval.weekday_bin_minutes" => self.weekday_bin_minutes = num(key, v)?,
            "missing.blocks_per_sensor_week" => self.missing.blocks_per_sensor_week = num(key, v)?,
            "missing.mean_hours" => self.missing.mean_hours = num(key, v)?,
            "missing.sd_hours" => self.missing.sd_hours = num(key, v)?,
            "missing.min_hours" => self.missing.min_hours = num(key, v)?,
            "missing.max_hours" => self.missing.max_hours = num(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Resolved configuration; parsing it back gives the same config.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.synth;
        let r = &self.rolling;
        let m = &self.missing;
        if let Some(seed) = self.seed {
            writeln!(f, "seed = {seed}")?;
        }
        let p = &self.paths;
        for (k, v) in [
            ("path.data", &p.data),
            ("path.meta", &p.meta),
            ("path.out", &p.out),
            ("path.clusters", &p.clusters),
            ("path.model", &p.model),
            ("path.report", &p.report),
        ] {
            if let Some(v) = v {
                writeln!(f, "{k} = {}", v.display())?;
            }
        }
        let rows: Vec<(&str, String)> = vec![
            ("synth.sensors", self.synth_sensors.to_string()),
            ("synth.days", self.synth_days.to_string()),
            ("synth.step_minutes", s.step_minutes.to_string()),
            ("synth.spacing_miles", format!("{:?}", s.spacing_miles)),
            ("synth.free_speed", format!("{:?}", s.free_speed)),
            ("synth.wave_speed", format!("{:?}", s.wave_speed)),
            ("synth.max_density", format!("{:?}", s.max_density)),
            ("synth.segment_jitter", format!("{:?}", s.segment_jitter)),
            ("synth.base_occupancy", format!("{:?}", s.base_occupancy)),
            ("synth.am_peak", format!("{:?}", s.am_peak)),
            ("synth.pm_peak", format!("{:?}", s.pm_peak)),
            ("synth.weekend_factor", format!("{:?}", s.weekend_factor)),
            ("synth.weekly_amplitude", format!("{:?}", s.weekly_amplitude)),
            ("synth.pulses_per_day", format!("{:?}", s.pulses_per_day)),
            ("synth.pulse_amplitude", format!("{:?}", s.pulse_amplitude)),
            ("synth.pulse_steps", s.pulse_steps.to_string()),
            ("synth.propagation_delay_steps", s.propagation_delay_steps.to_string()),
            ("synth.propagation_hops", s.propagation_hops.to_string()),
            ("synth.propagation_decay", format!("{:?}", s.propagation_decay)),
            ("synth.noise_sd", format!("{:?}", s.noise_sd)),
            ("synth.noise_ar", format!("{:?}", s.noise_ar)),
            ("data.min_fraction", format!("{:?}", self.min_fraction)),
            ("decompose.period", self.period.to_string()),
            ("cluster.radius_miles", format!("{:?}", r.radius_miles)),
            ("cluster.window_minutes", r.window_minutes.to_string()),
            ("cluster.stride_minutes", r.stride_minutes.to_string()),
            ("cluster.activity_quantile", format!("{:?}", r.activity_quantile)),
            ("cluster.normalize", r.normalize.to_string()),
            ("cluster.max_avg_span_miles", format!("{:?}", self.fhc.max_avg_span_miles)),
            ("cluster.threshold", format!("{:?}", self.fhc.threshold)),
            ("cluster.fuzziness", format!("{:?}", self.fhc.fuzziness)),
            ("eval.peak_occupancy", format!("{:?}", self.peak_occupancy)),
            ("eval.weekday_bin_minutes", self.weekday_bin_minutes.to_string()),
            ("missing.blocks_per_sensor_week", m.blocks_per_sensor_week.to_string()),
            ("missing.mean_hours", format!("{:?}", m.mean_hours)),
            ("missing.sd_hours", format!("{:?}", m.sd_hours)),
            ("missing.min_hours", format!("{:?}", m.min_hours)),
            ("missing.max_hours", format!("{:?}", m.max_hours)),
        ];
        for (k, v) in rows {
            writeln!(f, "{k} = {v}")?;
        }
        for line in self.model.to_text().lines() {
            writeln!(f, "model.{line}")?;
        }
        Ok(())
    }
}
