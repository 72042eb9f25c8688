//! Forecaster hyperparameters and their flat `key = value` text form.

use std::fmt;

use stdn_nn::Activation;

use crate::{ModelError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ForecasterConfig {
    /// Input window length w.
    pub window: usize,
    /// Forecast horizon h.
    pub horizon: usize,
    /// Filters of the stacked per-cluster time convolutions.
    pub conv_filters: Vec<usize>,
    /// Time extent of every per-cluster kernel.
    pub kernel_time: usize,
    /// Time pooling after the convolutions.
    pub pool: usize,
    /// Features v per sensor and step after the dense re-projection.
    pub projection_features: usize,
    pub convlstm_filters: Vec<usize>,
    /// Square spatial kernel of the ConvLSTM layers.
    pub convlstm_kernel: usize,
    /// Units of the dense layer after the ConvLSTM stack.
    pub fc_units: usize,
    /// Attach per-cluster denoising autoencoder heads.
    pub dae: bool,
    pub dae_widths: Vec<usize>,
    pub dae_activation: Activation,
    pub dropout: f64,
    pub batch: usize,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub learning_rate: f64,
    /// Trailing share of the training windows held out for validation.
    pub validation_fraction: f64,
    /// Days at the start of the panel used for training; the rest is test.
    pub train_days: usize,
}

const KEYS: [&str; 19] = [
    "window",
    "horizon",
    "conv_filters",
    "kernel_time",
    "pool",
    "projection_features",
    "convlstm_filters",
    "convlstm_kernel",
    "fc_units",
    "dae",
    "dae_widths",
    "dae_activation",
    "dropout",
    "batch",
    "epochs",
    "pretrain_epochs",
    "learning_rate",
    "validation_fraction",
    "train_days",
];

impl Default for ForecasterConfig {
    fn default() -> Self {
        ForecasterConfig::desk()
    }
}

impl ForecasterConfig {
    /// Full-size settings.
    pub fn paper() -> Self {
        ForecasterConfig {
            window: 6,
            horizon: 4,
            conv_filters: vec![32, 64],
            kernel_time: 2,
            pool: 2,
            projection_features: 2,
            convlstm_filters: vec![16, 32],
            convlstm_kernel: 3,
            fc_units: 128,
            dae: true,
            dae_widths: vec![40, 20, 10, 20, 40],
            dae_activation: Activation::Relu,
            dropout: 0.2,
            batch: 512,
            epochs: 400,
            pretrain_epochs: 60,
            learning_rate: 1e-3,
            validation_fraction: 0.1,
            train_days: 42,
        }
    }

    /// Scaled down to train in minutes on one CPU core.
    pub fn desk() -> Self {
        ForecasterConfig {
            conv_filters: vec![32, 64],
            pool: 1,
            projection_features: 6,
            convlstm_filters: vec![4, 8],
            fc_units: 256,
            batch: 64,
            epochs: 30,
            pretrain_epochs: 10,
            ..ForecasterConfig::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(ForecasterConfig::paper()),
            "desk" => Ok(ForecasterConfig::desk()),
            _ => Err(ModelError::Config(format!("unknown preset {name:?} (paper or desk)"))),
        }
    }

    pub fn keys() -> &'static [&'static str] {
        &KEYS
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "window" => self.window = parse(key, v)?,
            "horizon" => self.horizon = parse(key, v)?,
            "conv_filters" => self.conv_filters = parse_list(key, v)?,
            "kernel_time" => self.kernel_time = parse(key, v)?,
            "pool" => self.pool = parse(key, v)?,
            "projection_features" => self.projection_features = parse(key, v)?,
            "convlstm_filters" => self.convlstm_filters = parse_list(key, v)?,
            "convlstm_kernel" => self.convlstm_kernel = parse(key, v)?,
            "fc_units" => self.fc_units = parse(key, v)?,
            "dae" => self.dae = parse(key, v)?,
            "dae_widths" => self.dae_widths = parse_list(key, v)?,
            "dae_activation" => self.dae_activation = parse_activation(v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "validation_fraction" => self.validation_fraction = parse(key, v)?,
            "train_days" => self.train_days = parse(key, v)?,
            _ => return Err(ModelError::Config(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the desk preset. A `preset` line picks
    /// the starting point and is applied before every other key. `#` starts a
    /// comment.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut cfg = match pairs.iter().find(|(k, _)| k == "preset") {
            Some((_, v)) => ForecasterConfig::preset(v)?,
            None => ForecasterConfig::desk(),
        };
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window", self.window),
            ("horizon", self.horizon),
            ("kernel_time", self.kernel_time),
            ("pool", self.pool),
            ("projection_features", self.projection_features),
            ("convlstm_kernel", self.convlstm_kernel),
            ("fc_units", self.fc_units),
            ("batch", self.batch),
            ("train_days", self.train_days),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        for (name, list) in [
            ("conv_filters", &self.conv_filters),
            ("convlstm_filters", &self.convlstm_filters),
            ("dae_widths", &self.dae_widths),
        ] {
            if list.is_empty() || list.contains(&0) {
                return Err(ModelError::Config(format!("{name} must list positive sizes")));
            }
        }
        if !self.dae_widths.iter().eq(self.dae_widths.iter().rev()) {
            return Err(ModelError::Config(format!("dae_widths {:?} must be palindromic", self.dae_widths)));
        }
        if self.convlstm_kernel % 2 == 0 {
            return Err(ModelError::Config("convlstm_kernel must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(ModelError::Config("validation_fraction must lie in [0, 1)".into()));
        }
        let convolved = self.conv_filters.len() * (self.kernel_time - 1);
        if convolved >= self.window || (self.window - convolved) % self.pool != 0 {
            return Err(ModelError::Config(format!(
                "window {} does not fit {} time convolutions of width {} followed by pool {}",
                self.window,
                self.conv_filters.len(),
                self.kernel_time,
                self.pool
            )));
        }
        Ok(())
    }

    /// Every key in canonical order, one `key = value` per line.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ForecasterConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        for key in KEYS {
            let value = match key {
                "window" => self.window.to_string(),
                "horizon" => self.horizon.to_string(),
                "conv_filters" => list(&self.conv_filters),
                "kernel_time" => self.kernel_time.to_string(),
                "pool" => self.pool.to_string(),
                "projection_features" => self.projection_features.to_string(),
                "convlstm_filters" => list(&self.convlstm_filters),
                "convlstm_kernel" => self.convlstm_kernel.to_string(),
                "fc_units" => self.fc_units.to_string(),
                "dae" => self.dae.to_string(),
                "dae_widths" => list(&self.dae_widths),
                "dae_activation" => activation_name(self.dae_activation).to_string(),
                "dropout" => format!("{:?}", self.dropout),
                "batch" => self.batch.to_string(),
                "epochs" => self.epochs.to_string(),
                "pretrain_epochs" => self.pretrain_epochs.to_string(),
                "learning_rate" => format!("{:?}", self.learning_rate),
                "validation_fraction" => format!("{:?}", self.validation_fraction),
                "train_days" => self.train_days.to_string(),
                _ => unreachable!("every key is listed"),
            };
            writeln!(f, "{key} = {value}")?;
        }
        Ok(())
    }
}

/// Splits `key = value` lines, dropping blanks and `#` comments. Duplicate
/// keys are rejected.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ModelError::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
        let k = k.trim().to_string();
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(ModelError::Config(format!("line {}: duplicate key {k:?}", n + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| ModelError::Config(format!("bad value {v:?} for {key}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

pub fn parse_activation(v: &str) -> Result<Activation> {
    match v {
        "identity" => Ok(Activation::Identity),
        "relu" => Ok(Activation::Relu),
        "sigmoid" => Ok(Activation::Sigmoid),
        "tanh" => Ok(Activation::Tanh),
        _ => Err(ModelError::Config(format!("unknown activation {v:?}"))),
    }
}

pub fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Identity => "identity",
        Activation::Relu => "relu",
        Activation::Sigmoid => "sigmoid",
        Activation::Tanh => "tanh",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for cfg in [ForecasterConfig::paper(), ForecasterConfig::desk()] {
            assert_eq!(ForecasterConfig::parse(&cfg.to_text()).unwrap(), cfg);
        }
    }

    #[test]
    fn preset_applies_first() {
        let cfg = ForecasterConfig::parse("epochs = 3\n# comment\npreset = paper\n").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!((cfg.pool, cfg.fc_units), (2, 128));
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "colour = red",
            "window",
            "epochs = many",
            "dae_widths = 40,20,10",
            "window = 5\npool = 2",
            "dropout = 1.0",
            "epochs = 1\nepochs = 2",
        ] {
            assert!(matches!(ForecasterConfig::parse(text), Err(ModelError::Config(_))), "{text}");
        }
    }
}
