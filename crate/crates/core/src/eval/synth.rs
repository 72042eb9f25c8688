//! Synthetic corridor generator.
//!
//! Occupancy is built from a daily demand profile with morning and evening
//! peaks, a slow weekly modulation, congestion pulses that travel from sensor
//! to sensor with a fixed delay, and AR(1) noise. Flow and speed follow from
//! the triangular fundamental diagram of each segment.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::panel::{Panel, SensorMeta};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub step_minutes: i64,
    pub spacing_miles: f64,
    /// Mean free speed s (mph).
    pub free_speed: f64,
    /// Mean backward wave speed w (mph).
    pub wave_speed: f64,
    /// Mean jam occupancy b.
    pub max_density: f64,
    /// Relative per-segment spread of s, w and b.
    pub segment_jitter: f64,
    pub base_occupancy: f64,
    pub am_peak: f64,
    pub pm_peak: f64,
    /// Multiplier on the peaks during weekends.
    pub weekend_factor: f64,
    /// Relative amplitude of the weekly sinusoid.
    pub weekly_amplitude: f64,
    pub pulses_per_day: f64,
    pub pulse_amplitude: f64,
    pub pulse_steps: usize,
    pub propagation_delay_steps: usize,
    pub propagation_hops: usize,
    pub propagation_decay: f64,
    pub noise_sd: f64,
    pub noise_ar: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            step_minutes: 15,
            spacing_miles: 1.0,
            free_speed: 65.0,
            wave_speed: 20.0,
            max_density: 60.0,
            segment_jitter: 0.05,
            base_occupancy: 3.0,
            am_peak: 6.0,
            pm_peak: 7.0,
            weekend_factor: 0.5,
            weekly_amplitude: 0.05,
            pulses_per_day: 6.0,
            pulse_amplitude: 10.0,
            pulse_steps: 6,
            propagation_delay_steps: 4,
            propagation_hops: 3,
            propagation_decay: 0.85,
            noise_sd: 0.4,
            noise_ar: 0.7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("free_speed", self.free_speed),
            ("wave_speed", self.wave_speed),
            ("max_density", self.max_density),
            ("spacing_miles", self.spacing_miles),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("segment_jitter", self.segment_jitter),
            ("base_occupancy", self.base_occupancy),
            ("am_peak", self.am_peak),
            ("pm_peak", self.pm_peak),
            ("weekend_factor", self.weekend_factor),
            ("weekly_amplitude", self.weekly_amplitude),
            ("pulses_per_day", self.pulses_per_day),
            ("pulse_amplitude", self.pulse_amplitude),
            ("propagation_decay", self.propagation_decay),
            ("noise_sd", self.noise_sd),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.step_minutes <= 0 || 1440 % self.step_minutes != 0 {
            return Err(Error::Config(format!(
                "step_minutes must divide a day, got {}",
                self.step_minutes
            )));
        }
        if self.segment_jitter >= 1.0 {
            return Err(Error::Config("segment_jitter must be below 1".into()));
        }
        if !(self.noise_ar.abs() < 1.0) {
            return Err(Error::Config("noise_ar must lie in (-1, 1)".into()));
        }
        if self.pulse_steps == 0 {
            return Err(Error::Config("pulse_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Triangular fundamental diagram `min(s·o, w·(b − o))`, floored at zero.
pub fn fundamental_flow(o: f64, s: f64, w: f64, b: f64) -> f64 {
    (s * o).min(w * (b - o)).max(0.0)
}

fn bump(hour: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((hour - center) / width).powi(2)).exp()
}

/// Generates an `n`-sensor corridor over `days` days starting Monday 2016-01-04.
/// Pulses travel toward higher sensor indices.
pub fn synth_generate(cfg: &SynthConfig, n: usize, days: usize, seed: u64) -> Result<Panel> {
    cfg.validate()?;
    if n == 0 || days == 0 {
        return Err(Error::Config("need at least one sensor and one day".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_day = (1440 / cfg.step_minutes) as usize;
    let steps = per_day * days;

    let mut jitter = |base: f64| base * (1.0 + cfg.segment_jitter * rng.random_range(-1.0..=1.0));
    let segments: Vec<(f64, f64, f64)> = (0..n)
        .map(|_| (jitter(cfg.free_speed), jitter(cfg.wave_speed), jitter(cfg.max_density)))
        .collect();
    let demand_scale: Vec<f64> = (0..n).map(|_| 0.9 + 0.2 * rng.random::<f64>()).collect();

    let mut occ = vec![0.0; n * steps];
    for t in 0..steps {
        let day = t / per_day;
        let hour = (t % per_day) as f64 * cfg.step_minutes as f64 / 60.0;
        let peak_factor = if day % 7 >= 5 { cfg.weekend_factor } else { 1.0 };
        let weekly = 1.0 + cfg.weekly_amplitude * (2.0 * std::f64::consts::PI * day as f64 / 7.0).sin();
        let profile = cfg.base_occupancy
            + peak_factor * (cfg.am_peak * bump(hour, 8.0, 1.2) + cfg.pm_peak * bump(hour, 17.5, 1.5));
        for i in 0..n {
            occ[i * steps + t] = demand_scale[i] * weekly * profile;
        }
    }

    // Pulses start around the daily peaks and spread downstream.
    if cfg.pulses_per_day > 0.0 && cfg.pulse_amplitude > 0.0 {
        let poisson = Poisson::new(cfg.pulses_per_day)
            .map_err(|e| Error::Config(format!("pulse rate: {e}")))?;
        for day in 0..days {
            let rate = if day % 7 >= 5 { cfg.weekend_factor } else { 1.0 };
            let count = poisson.sample(&mut rng) as usize;
            for _ in 0..count {
                let keep = rng.random::<f64>() < rate;
                let center = if rng.random::<bool>() { 8.0 } else { 17.5 };
                let hour = center + rng.random_range(-2.0..=2.0);
                let origin = rng.random_range(0..n);
                let amp = cfg.pulse_amplitude * rng.random_range(0.7..=1.3);
                if !keep {
                    continue;
                }
                let start = day * per_day + (hour * 60.0 / cfg.step_minutes as f64) as usize;
                for hop in 0..=cfg.propagation_hops {
                    let i = origin + hop;
                    if i >= n {
                        break;
                    }
                    let a = amp * cfg.propagation_decay.powi(hop as i32);
                    let t0 = start + hop * cfg.propagation_delay_steps;
                    for k in 0..cfg.pulse_steps {
                        let t = t0 + k;
                        if t >= steps {
                            break;
                        }
                        let shape = (std::f64::consts::PI * (k as f64 + 0.5) / cfg.pulse_steps as f64).sin();
                        occ[i * steps + t] += a * shape;
                    }
                }
            }
        }
    }

    if cfg.noise_sd > 0.0 {
        let innovation = Normal::new(0.0, cfg.noise_sd * (1.0 - cfg.noise_ar * cfg.noise_ar).sqrt())
            .map_err(|e| Error::Config(format!("noise: {e}")))?;
        for i in 0..n {
            let mut e = cfg.noise_sd * Normal::new(0.0, 1.0).unwrap().sample(&mut rng);
            for t in 0..steps {
                occ[i * steps + t] += e;
                e = cfg.noise_ar * e + innovation.sample(&mut rng);
            }
        }
    }

    let mut values = vec![0.0; n * steps * 3];
    for i in 0..n {
        let (s, w, b) = segments[i];
        for t in 0..steps {
            let o = occ[i * steps + t].clamp(0.0, 0.95 * b);
            let flow = fundamental_flow(o, s, w, b);
            let speed = if o < 1e-9 { s } else { flow / o };
            let base = (i * steps + t) * 3;
            values[base] = flow;
            values[base + 1] = o;
            values[base + 2] = speed;
        }
    }
    let sensors = (0..n)
        .map(|i| SensorMeta::mainline(format!("S{i:03}"), i as f64 * cfg.spacing_miles))
        .collect();
    let start = NaiveDate::from_ymd_opt(2016, 1, 4)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid start date");
    Panel::from_dense(sensors, start, cfg.step_minutes, steps, values)
}
