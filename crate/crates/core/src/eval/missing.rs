use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::panel::{impute_forward, Panel};
use crate::{Error, Result};

/// Random missing-block generator settings. Durations are drawn from a
/// normal distribution and clipped to `[min_hours, max_hours]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingConfig {
    pub blocks_per_sensor_week: usize,
    pub mean_hours: f64,
    pub sd_hours: f64,
    pub min_hours: f64,
    pub max_hours: f64,
}

impl Default for MissingConfig {
    fn default() -> Self {
        MissingConfig {
            blocks_per_sensor_week: 1,
            mean_hours: 2.0,
            sd_hours: 0.5,
            min_hours: 0.5,
            max_hours: 4.0,
        }
    }
}

/// Expected fraction of masked cells per sensor: blocks × mean duration / week.
pub fn expected_masked_fraction(cfg: &MissingConfig) -> f64 {
    cfg.blocks_per_sensor_week as f64 * cfg.mean_hours / (7.0 * 24.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissingInjection {
    /// Panel with injected blocks unobserved and forward-filled, for model input.
    pub input: Panel,
    /// True for every injected cell, in panel layout.
    pub mask: Vec<bool>,
    /// The untouched panel, for scoring.
    pub truth: Panel,
}

impl MissingInjection {
    pub fn masked_fraction(&self, sensor: usize) -> f64 {
        let block = self.truth.n_steps() * self.truth.n_features();
        let cells = &self.mask[sensor * block..(sensor + 1) * block];
        cells.iter().filter(|&&m| m).count() as f64 / block as f64
    }
}

/// Masks one contiguous block per sensor per full week (all features), at a
/// uniformly random start inside the week.
pub fn inject_missing(p: &Panel, seed: u64, cfg: &MissingConfig) -> Result<MissingInjection> {
    let step = p.step_minutes() as f64;
    let week_steps = (7 * 24 * 60 / p.step_minutes()) as usize;
    if p.n_steps() < week_steps {
        return Err(Error::InsufficientData(format!(
            "missing-data injection needs one week ({week_steps} steps), panel has {}",
            p.n_steps()
        )));
    }
    if !(cfg.sd_hours >= 0.0) || !(cfg.min_hours > 0.0) || !(cfg.max_hours >= cfg.min_hours) {
        return Err(Error::Parameter(format!("invalid missing-block settings {cfg:?}")));
    }
    let normal = Normal::new(cfg.mean_hours, cfg.sd_hours)
        .map_err(|e| Error::Parameter(format!("duration distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weeks = p.n_steps() / week_steps;
    let (n, _, k) = p.shape();
    let mut mask = vec![false; p.values().len()];
    for i in 0..n {
        for w in 0..weeks {
            for _ in 0..cfg.blocks_per_sensor_week {
                let hours = normal.sample(&mut rng).clamp(cfg.min_hours, cfg.max_hours);
                let len = ((hours * 60.0 / step).round() as usize).clamp(1, week_steps);
                let start = w * week_steps + rng.random_range(0..=week_steps - len);
                for t in start..start + len {
                    for f in 0..k {
                        mask[p.index(i, t, f)] = true;
                    }
                }
            }
        }
    }
    let mut masked = p.clone();
    for i in 0..n {
        for t in 0..p.n_steps() {
            for f in 0..k {
                if mask[p.index(i, t, f)] {
                    masked.set(i, t, f, f64::NAN, false);
                }
            }
        }
    }
    Ok(MissingInjection {
        input: impute_forward(&masked)?,
        mask,
        truth: p.clone(),
    })
}
