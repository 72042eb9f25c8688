//! The trained forecaster as an artifact: preprocessing state, clusters and
//! network, plus the train/test pipeline around it.

use std::ops::Range;
use std::path::Path;

use stdn_core::cluster::MembershipMatrix;
use stdn_core::decompose::{decompose_causal, fit_seasonal_profile, PanelDecomposition, SeasonalProfile};
use stdn_core::eval::{ForecastRecord, ForecastSet};
use stdn_core::panel::{apply_scale, fit_scale, impute_forward, load_meta, write_meta, Panel, ScalingParams, SensorMeta, FLOW};
use stdn_nn::{checkpoint, LayerGraph, Tensor};

use crate::config::{parse_pairs, ForecasterConfig};
use crate::network::{build_dae, build_forecaster, Network};
use crate::train::{fit, predict, BlockData, Dataset, FitOptions, History};
use crate::windows::{batch_inputs, make_windows, WindowSample, WindowShape};
use crate::{ModelError, Result};

const FORMAT: &str = "stdn-model 1";

/// A scaled, gap-free panel and its causal decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub panel: Panel,
    pub decomposition: PanelDecomposition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    pub config: ForecasterConfig,
    pub seed: u64,
    pub sensors: Vec<SensorMeta>,
    pub clusters: MembershipMatrix,
    pub scaling: ScalingParams,
    pub profile: SeasonalProfile,
    pub network: Network,
}

/// Windows of one panel as a training dataset.
pub struct WindowData<'a> {
    pub samples: &'a [WindowSample],
    pub shape: WindowShape,
}

impl Dataset for WindowData<'_> {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn batch(&self, indices: &[usize]) -> Result<(Vec<(String, Tensor)>, Vec<f64>)> {
        let picked: Vec<&WindowSample> = indices.iter().map(|&i| &self.samples[i]).collect();
        batch_inputs(&picked, self.shape)
    }
}

/// Steps in the training span of a panel.
pub fn train_steps(p: &Panel, cfg: &ForecasterConfig) -> Result<usize> {
    let end = cfg.train_days * p.steps_per_day();
    if end > p.n_steps() {
        return Err(ModelError::Data(stdn_core::Error::InsufficientData(format!(
            "panel has {} steps, training span needs {end}",
            p.n_steps()
        ))));
    }
    Ok(end)
}

/// Anchors whose whole horizon lies inside the first `train_end` steps.
pub fn train_anchors(train_end: usize, cfg: &ForecasterConfig) -> Range<usize> {
    0..(train_end + 1).saturating_sub(cfg.horizon)
}

/// Anchors whose horizon starts at or after `train_end`.
pub fn test_anchors(train_end: usize, n_steps: usize) -> Range<usize> {
    train_end.saturating_sub(1)..n_steps
}

fn prepare_with(raw: &Panel, scaling: &ScalingParams, profile: &SeasonalProfile) -> Result<Prepared> {
    let scaled = apply_scale(&impute_forward(raw)?, scaling)?;
    let decomposition = decompose_causal(&scaled, profile)?;
    Ok(Prepared { panel: scaled, decomposition })
}

/// Per-cluster slices of the flat `(sensor, step)` target blocks.
pub fn cluster_blocks(samples: &[WindowSample], members: &[usize], h: usize) -> BlockData {
    let dim = members.len() * h;
    let mut rows = Vec::with_capacity(samples.len() * dim);
    for s in samples {
        for &m in members {
            rows.extend_from_slice(&s.target[m * h..(m + 1) * h]);
        }
    }
    BlockData { dim, rows }
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

/// Pretrains one denoising autoencoder per cluster on the clean target blocks
/// of `samples`. The dropout layers supply the input corruption.
pub fn pretrain_dae(
    samples: &[WindowSample],
    clusters: &[Vec<usize>],
    cfg: &ForecasterConfig,
    seed: u64,
) -> Result<(Vec<LayerGraph>, Vec<History>)> {
    let mut graphs = Vec::with_capacity(clusters.len());
    let mut histories = Vec::with_capacity(clusters.len());
    for (j, members) in clusters.iter().enumerate() {
        let data = cluster_blocks(samples, members, cfg.horizon);
        let (mut g, out) = build_dae(j, data.dim, cfg, sub_seed(seed, 100 + j as u64))?;
        let opts = FitOptions {
            epochs: cfg.pretrain_epochs,
            batch: cfg.batch,
            learning_rate: cfg.learning_rate,
            max_steps: None,
        };
        histories.push(fit(&mut g, out, &data, None, &opts, sub_seed(seed, 200 + j as u64))?);
        graphs.push(g);
    }
    Ok((graphs, histories))
}

/// Trains a built network on chronologically ordered windows, holding out the
/// trailing `validation_fraction` for validation.
pub fn train(network: &mut Network, samples: &[WindowSample], shape: WindowShape, cfg: &ForecasterConfig, seed: u64) -> Result<History> {
    let n_val = (samples.len() as f64 * cfg.validation_fraction).floor() as usize;
    let (train, val) = samples.split_at(samples.len() - n_val);
    let train = WindowData { samples: train, shape };
    let val = WindowData { samples: val, shape };
    let opts = FitOptions {
        epochs: cfg.epochs,
        batch: cfg.batch,
        learning_rate: cfg.learning_rate,
        max_steps: None,
    };
    fit(&mut network.graph, network.output, &train, Some(&val), &opts, seed)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub forecaster: Forecaster,
    pub history: History,
    pub pretrain: Vec<History>,
    pub notes: Vec<String>,
}

impl Forecaster {
    /// Fits scaling and seasonal profiles on the training span of `raw`,
    /// pretrains heads when configured, then trains the whole network.
    pub fn train(raw: &Panel, clusters: &MembershipMatrix, cfg: &ForecasterConfig, seed: u64) -> Result<TrainOutcome> {
        cfg.validate()?;
        if clusters.n_sensors() != raw.n_sensors() {
            return Err(ModelError::Config(format!(
                "clusters cover {} sensors, panel has {}",
                clusters.n_sensors(),
                raw.n_sensors()
            )));
        }
        let train_end = train_steps(raw, cfg)?;
        let scaling = fit_scale(raw, 0..train_end)?;
        let scaled = apply_scale(&impute_forward(raw)?, &scaling)?;
        let profile = fit_seasonal_profile(&scaled, 0..train_end)?;
        let prep = prepare_with(raw, &scaling, &profile)?;
        let samples = make_windows(&prep.panel, &prep.decomposition, cfg.window, cfg.horizon, train_anchors(train_end, cfg))?;
        let shape = WindowShape {
            sensors: raw.n_sensors(),
            features: raw.n_features(),
            window: cfg.window,
            horizon: cfg.horizon,
        };
        let (heads, pretrain) = if cfg.dae {
            let (g, h) = pretrain_dae(&samples, clusters.clusters(), cfg, seed)?;
            (Some(g), h)
        } else {
            (None, Vec::new())
        };
        let (mut network, notes) =
            build_forecaster(clusters.clusters(), shape.sensors, shape.features, cfg, heads.as_deref(), sub_seed(seed, 1))?;
        let history = train(&mut network, &samples, shape, cfg, sub_seed(seed, 2))?;
        let forecaster = Forecaster {
            config: cfg.clone(),
            seed,
            sensors: raw.sensors().to_vec(),
            clusters: clusters.clone(),
            scaling,
            profile,
            network,
        };
        Ok(TrainOutcome { forecaster, history, pretrain, notes })
    }

    pub fn shape(&self) -> WindowShape {
        WindowShape {
            sensors: self.sensors.len(),
            features: self.scaling.n_features(),
            window: self.config.window,
            horizon: self.config.horizon,
        }
    }

    /// Imputes, scales and decomposes a raw panel with the stored state.
    pub fn prepare(&self, raw: &Panel) -> Result<Prepared> {
        if raw.sensors() != self.sensors.as_slice() {
            return Err(ModelError::Data(stdn_core::Error::Format(
                "panel sensors differ from the ones the model was trained on".into(),
            )));
        }
        prepare_with(raw, &self.scaling, &self.profile)
    }

    pub fn windows(&self, prep: &Prepared, anchors: Range<usize>) -> Result<Vec<WindowSample>> {
        make_windows(&prep.panel, &prep.decomposition, self.config.window, self.config.horizon, anchors)
    }

    /// Stationarized, scaled predictions: one `(sensor, step)` block per sample.
    pub fn predict(&self, samples: &[WindowSample]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len() * self.shape().target_len());
        let refs: Vec<&WindowSample> = samples.iter().collect();
        for chunk in refs.chunks(self.config.batch.max(1)) {
            let (inputs, _) = batch_inputs(chunk, self.shape())?;
            out.extend(predict(&self.network.graph, self.network.output, &inputs)?);
        }
        Ok(out)
    }

    /// Forecast records in original units for the windows anchored in
    /// `anchors`. Inputs come from `input`; truth from `truth`.
    pub fn forecast(&self, input: &Panel, truth: &Panel, anchors: Range<usize>) -> Result<ForecastSet> {
        let prep = self.prepare(input)?;
        let samples = self.windows(&prep, anchors)?;
        let preds = self.predict(&samples)?;
        records_from_stationary(&prep, truth, &self.scaling, &samples, &preds, self.config.horizon)
    }

    /// Writes `model.txt`, `sensors.csv`, `clusters.csv`, `scaling.csv`,
    /// `profile.csv` and `checkpoint.txt` into `dir`, each via rename.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
        let text = format!(
            "format = {FORMAT}\nseed = {}\nstep_minutes = {}\n{}",
            self.seed,
            self.profile.step_minutes(),
            self.config.to_text()
        );
        atomic(dir, "model.txt", |p| std::fs::write(p, &text).map_err(|e| ModelError::io(p, e)))?;
        atomic(dir, "sensors.csv", |p| Ok(write_meta(&self.sensors, p)?))?;
        atomic(dir, "clusters.csv", |p| Ok(self.clusters.write_csv(&self.sensors, p)?))?;
        atomic(dir, "scaling.csv", |p| Ok(self.scaling.write_csv(p)?))?;
        atomic(dir, "profile.csv", |p| Ok(self.profile.write_csv(p)?))?;
        checkpoint::save(self.network.graph.params(), &dir.join("checkpoint.txt"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("model.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| ModelError::io(&path, e))?;
        let mut seed = None;
        let mut step = None;
        let mut format = None;
        let mut rest = String::new();
        for (k, v) in parse_pairs(&text)? {
            match k.as_str() {
                "format" => format = Some(v),
                "seed" => seed = Some(v.parse().map_err(|_| ModelError::Config(format!("bad seed {v:?}")))?),
                "step_minutes" => step = Some(v.parse().map_err(|_| ModelError::Config(format!("bad step {v:?}")))?),
                _ => rest.push_str(&format!("{k} = {v}\n")),
            }
        }
        if format.as_deref() != Some(FORMAT) {
            return Err(ModelError::Data(stdn_core::Error::Format(format!(
                "{}: not a {FORMAT} file",
                path.display()
            ))));
        }
        let seed = seed.ok_or_else(|| ModelError::Config("model.txt has no seed".into()))?;
        let config = ForecasterConfig::parse(&rest)?;
        let sensors = load_meta(&dir.join("sensors.csv"))?;
        let clusters = MembershipMatrix::read_csv(&dir.join("clusters.csv"), &sensors)?;
        let scaling = ScalingParams::read_csv(&dir.join("scaling.csv"))?;
        let step = step.ok_or_else(|| ModelError::Config("model.txt has no step_minutes".into()))?;
        let profile = SeasonalProfile::read_csv(&dir.join("profile.csv"), sensors.len(), scaling.n_features(), step)?;
        let (mut network, _) = build_forecaster(clusters.clusters(), sensors.len(), scaling.n_features(), &config, None, sub_seed(seed, 1))?;
        let saved = checkpoint::load(&dir.join("checkpoint.txt"))?;
        checkpoint::restore(network.graph.params_mut(), &saved)?;
        Ok(Forecaster { config, seed, sensors, clusters, scaling, profile, network })
    }
}

fn atomic(dir: &Path, name: &str, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let dest = dir.join(name);
    write(&tmp)?;
    std::fs::rename(&tmp, &dest).map_err(|e| ModelError::io(&dest, e))
}

/// Turns stationarized, scaled predictions (one `(sensor, step)` block per
/// sample) back into original units and pairs them with the truth.
pub fn records_from_stationary(
    prep: &Prepared,
    truth: &Panel,
    scaling: &ScalingParams,
    samples: &[WindowSample],
    preds: &[f64],
    h: usize,
) -> Result<ForecastSet> {
    let n = prep.panel.n_sensors();
    if preds.len() != samples.len() * n * h {
        return Err(ModelError::Config(format!(
            "{} predictions for {} samples of {n} sensors × {h}",
            preds.len(),
            samples.len()
        )));
    }
    records(prep, truth, scaling, samples, h, |si, i, j| {
        let scaled = preds[(si * n + i) * h + j] + samples[si].anchors[i].level();
        scaling.invert_value(i, FLOW, scaled)
    })
}

/// Forecast records from a predictor in original units, called as
/// `predict(sample, sensor, target_step)`.
pub fn records_from_raw(
    prep: &Prepared,
    truth: &Panel,
    scaling: &ScalingParams,
    samples: &[WindowSample],
    h: usize,
    predict: impl Fn(&WindowSample, usize, usize) -> f64,
) -> Result<ForecastSet> {
    records(prep, truth, scaling, samples, h, |si, i, j| predict(&samples[si], i, samples[si].anchor + 1 + j))
}

/// `level` of each record is the seasonal plus trend value at the target.
/// Targets without an observed truth are skipped.
fn records(
    prep: &Prepared,
    truth: &Panel,
    scaling: &ScalingParams,
    samples: &[WindowSample],
    h: usize,
    predict: impl Fn(usize, usize, usize) -> f64,
) -> Result<ForecastSet> {
    let n = prep.panel.n_sensors();
    if truth.shape() != prep.panel.shape() {
        return Err(ModelError::Config(format!(
            "truth panel {:?} does not match input {:?}",
            truth.shape(),
            prep.panel.shape()
        )));
    }
    let d = &prep.decomposition;
    let mut records = Vec::with_capacity(samples.len() * n * h);
    for (si, s) in samples.iter().enumerate() {
        for i in 0..n {
            for j in 0..h {
                let target = s.anchor + 1 + j;
                if !truth.is_observed(i, target, FLOW) {
                    continue;
                }
                let level = d.seasonal(i, target, FLOW) + d.trend(i, target, FLOW);
                records.push(ForecastRecord {
                    target_step: target,
                    sensor: i,
                    horizon: j + 1,
                    truth: truth.value(i, target, FLOW),
                    predicted: predict(si, i, j),
                    level: scaling.invert_value(i, FLOW, level),
                });
            }
        }
    }
    Ok(ForecastSet { records })
}
