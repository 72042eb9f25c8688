//! Sliding forecast windows around each anchor step.

use stdn_core::decompose::{stationarize_window, Anchor, PanelDecomposition};
use stdn_core::panel::{Panel, FLOW};
use stdn_nn::Tensor;

use crate::{ModelError, Result};

/// One training or evaluation example anchored at step `anchor` (the last
/// input step t). Seasonal and trend parts are relative to their value at t.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub anchor: usize,
    /// Residuals over `t−w+1..=t`, laid out `(sensor, step, feature)`.
    pub residual: Vec<f64>,
    /// Trend over `t−w+1..=t`, laid out `(step, sensor, feature)`.
    pub trend: Vec<f64>,
    /// Flow seasonal part over `t−w+1..=t+h`, laid out `(sensor, step)`.
    pub seasonal: Vec<f64>,
    /// Flow over `t+1..=t+h` minus the anchor level, laid out `(sensor, step)`.
    pub target: Vec<f64>,
    /// Flow anchors per sensor.
    pub anchors: Vec<Anchor>,
}

/// Dimensions shared by every window of one panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowShape {
    pub sensors: usize,
    pub features: usize,
    pub window: usize,
    pub horizon: usize,
}

impl WindowShape {
    pub fn target_len(&self) -> usize {
        self.sensors * self.horizon
    }

    pub fn seasonal_len(&self) -> usize {
        self.sensors * (self.window + self.horizon)
    }
}

/// First and one-past-last anchor of a series of `n_steps`.
pub fn anchor_range(n_steps: usize, w: usize, h: usize) -> Result<std::ops::Range<usize>> {
    if w == 0 || h == 0 {
        return Err(ModelError::Config("window and horizon must be positive".into()));
    }
    if n_steps < w + h {
        return Err(ModelError::Data(stdn_core::Error::InsufficientData(format!(
            "{n_steps} steps cannot hold a window of {w} plus horizon {h}"
        ))));
    }
    Ok(w - 1..n_steps - h)
}

/// Builds the window anchored at `t` from a scaled, gap-free panel and its
/// decomposition.
pub fn window_at(p: &Panel, d: &PanelDecomposition, t: usize, w: usize, h: usize) -> Result<WindowSample> {
    let (n, steps, k) = p.shape();
    if d.shape() != p.shape() {
        return Err(ModelError::Config(format!(
            "decomposition {:?} does not match panel {:?}",
            d.shape(),
            p.shape()
        )));
    }
    if t + 1 < w || t + h >= steps {
        return Err(ModelError::Config(format!("anchor {t} leaves no room for window {w} and horizon {h}")));
    }
    let start = t + 1 - w;
    let span = w + h;
    let mut residual = vec![0.0; n * w * k];
    let mut trend = vec![0.0; w * n * k];
    let mut seasonal = vec![0.0; n * span];
    let mut target = vec![0.0; n * h];
    let mut anchors = Vec::with_capacity(n);
    for i in 0..n {
        for f in 0..k {
            let comp = |c: fn(&PanelDecomposition, usize, usize, usize) -> f64| -> Vec<f64> {
                (start..start + span).map(|s| c(d, i, s, f)).collect()
            };
            let st = stationarize_window(
                &comp(PanelDecomposition::seasonal),
                &comp(PanelDecomposition::trend),
                &comp(PanelDecomposition::residual),
                w - 1,
            )?;
            for j in 0..w {
                residual[(i * w + j) * k + f] = st.residual[j];
                trend[(j * n + i) * k + f] = st.trend[j];
            }
            if f == FLOW {
                seasonal[i * span..(i + 1) * span].copy_from_slice(&st.seasonal);
                for j in 0..h {
                    target[i * h + j] = p.value(i, t + 1 + j, FLOW) - st.anchor.level();
                }
                anchors.push(st.anchor);
            }
        }
    }
    Ok(WindowSample { anchor: t, residual, trend, seasonal, target, anchors })
}

/// Every stride-1 window whose anchor lies in `anchors` (clipped to the
/// anchors the panel can support).
pub fn make_windows(
    p: &Panel,
    d: &PanelDecomposition,
    w: usize,
    h: usize,
    anchors: std::ops::Range<usize>,
) -> Result<Vec<WindowSample>> {
    let valid = anchor_range(p.n_steps(), w, h)?;
    let lo = anchors.start.max(valid.start);
    let hi = anchors.end.min(valid.end);
    (lo..hi.max(lo)).map(|t| window_at(p, d, t, w, h)).collect()
}

/// Stacks samples into the forecaster's named inputs plus the flat target.
pub fn batch_inputs(samples: &[&WindowSample], shape: WindowShape) -> Result<(Vec<(String, Tensor)>, Vec<f64>)> {
    let b = samples.len();
    let WindowShape { sensors: n, features: k, window: w, horizon: h } = shape;
    let mut residual = Vec::with_capacity(b * n * w * k);
    let mut trend = Vec::with_capacity(b * n * w * k);
    let mut seasonal = Vec::with_capacity(b * shape.seasonal_len());
    let mut target = Vec::with_capacity(b * n * h);
    for s in samples {
        residual.extend_from_slice(&s.residual);
        trend.extend_from_slice(&s.trend);
        seasonal.extend_from_slice(&s.seasonal);
        target.extend_from_slice(&s.target);
    }
    Ok((
        vec![
            ("residual".to_string(), Tensor::new(&[b, n, w, k], residual)?),
            ("trend".to_string(), Tensor::new(&[b, w, n, k], trend)?),
            ("seasonal".to_string(), Tensor::new(&[b, shape.seasonal_len()], seasonal)?),
        ],
        target,
    ))
}
