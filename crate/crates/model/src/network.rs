//! Wiring of the cluster-based CNN-LSTM forecaster and its denoising heads.

use stdn_nn::{Activation, LayerGraph};

use crate::config::ForecasterConfig;
use crate::{ModelError, Result};

/// A built forecaster graph and the layer ids callers read.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub graph: LayerGraph,
    /// Final `(sensors · horizon)` output.
    pub output: usize,
    /// The `(w, s, v, 2)` block of projected residual features and trend
    /// entering the ConvLSTM stack.
    pub features: usize,
    /// Prediction before the denoising heads (equal to `output` without them).
    pub ybar: usize,
}

/// Hidden widths for a head of `dim` inputs. Widths shrink in proportion when
/// `dim` is below the bottleneck, never below one unit.
pub fn scaled_dae_widths(widths: &[usize], dim: usize) -> Vec<usize> {
    let bottleneck = widths.iter().copied().min().unwrap_or(1);
    if dim >= bottleneck {
        return widths.to_vec();
    }
    widths.iter().map(|&u| (u * dim).div_ceil(bottleneck).max(1)).collect()
}

/// Appends a denoising stack: dropout before every dense layer, hidden
/// widths from `widths`, linear output of `dim` units.
fn dae_stack(
    g: &mut LayerGraph,
    prefix: &str,
    input: usize,
    dim: usize,
    widths: &[usize],
    activation: Activation,
    dropout: f64,
) -> Result<usize> {
    let mut x = input;
    for (l, &units) in widths.iter().enumerate() {
        let d = g.dropout(&format!("{prefix}.drop{l}"), x, dropout)?;
        x = g.dense(&format!("{prefix}.l{l}"), d, units, activation)?;
    }
    let d = g.dropout(&format!("{prefix}.drop{}", widths.len()), x, dropout)?;
    Ok(g.dense(&format!("{prefix}.out"), d, dim, Activation::Identity)?)
}

/// Standalone denoising autoencoder for one cluster's output block, with the
/// same parameter names it carries inside the forecaster. Input is `"x"`.
pub fn build_dae(cluster: usize, dim: usize, cfg: &ForecasterConfig, seed: u64) -> Result<(LayerGraph, usize)> {
    let mut g = LayerGraph::new(seed);
    let x = g.input("x", &[dim])?;
    let widths = scaled_dae_widths(&cfg.dae_widths, dim);
    let out = dae_stack(&mut g, &format!("dae{cluster}"), x, dim, &widths, cfg.dae_activation, cfg.dropout)?;
    Ok((g, out))
}

/// Builds the forecaster over `clusters` of `n_sensors` sensors with
/// `n_features` input features. With `cfg.dae` set, per-cluster heads are
/// attached and, when `pretrained` is given, initialized from those graphs by
/// parameter name. Returns notes about adjusted head widths.
pub fn build_forecaster(
    clusters: &[Vec<usize>],
    n_sensors: usize,
    n_features: usize,
    cfg: &ForecasterConfig,
    pretrained: Option<&[LayerGraph]>,
    seed: u64,
) -> Result<(Network, Vec<String>)> {
    cfg.validate()?;
    if clusters.is_empty() {
        return Err(ModelError::Config("no clusters".into()));
    }
    let mut covered = vec![false; n_sensors];
    for (j, members) in clusters.iter().enumerate() {
        if members.is_empty() {
            return Err(ModelError::Config(format!("cluster {j} has no members")));
        }
        for &m in members {
            *covered.get_mut(m).ok_or_else(|| ModelError::Config(format!("cluster {j} names sensor {m} of {n_sensors}")))? =
                true;
        }
    }
    if let Some(i) = covered.iter().position(|c| !c) {
        return Err(ModelError::Config(format!("sensor {i} belongs to no cluster")));
    }
    let (s, w, h, v) = (n_sensors, cfg.window, cfg.horizon, cfg.projection_features);
    let mut g = LayerGraph::new(seed);
    let residual = g.input("residual", &[s, w, n_features])?;
    let trend = g.input("trend", &[w, s, n_features])?;
    let seasonal = g.input("seasonal", &[s * (w + h)])?;

    let mk = g.multikernel_conv("mkconv", residual, clusters, cfg.kernel_time, &cfg.conv_filters, cfg.pool)?;
    // One dense map per cluster onto its members' (step, sensor, v) grid
    // cells; cells shared by several clusters are merged.
    let per_cluster = g.shape(mk)[0] / clusters.len();
    let mut blocks = Vec::with_capacity(clusters.len());
    let mut cells = Vec::new();
    for (j, members) in clusters.iter().enumerate() {
        let own: Vec<usize> = (j * per_cluster..(j + 1) * per_cluster).collect();
        let hj = g.gather(&format!("fc_residual{j}.in"), mk, 0, &own)?;
        blocks.push(g.dense(&format!("fc_residual{j}"), hj, w * members.len() * v, Activation::Identity)?);
        for step in 0..w {
            for &m in members {
                cells.extend((0..v).map(|c| (step * s + m) * v + c));
            }
        }
    }
    let joined = g.concat("fc_residual", &blocks, 0)?;
    let proj = g.cluster_merge("residual_merge", joined, &cells, w * s * v)?;
    let proj = g.reshape("residual_grid", proj, &[w, s, v, 1])?;
    let tproj = g.dense("fc_trend", trend, v, Activation::Identity)?;
    let tproj = g.reshape("trend_grid", tproj, &[w, s, v, 1])?;
    let features = g.concat("grid", &[proj, tproj], 3)?;

    let k = cfg.convlstm_kernel;
    let mut x = features;
    let last = cfg.convlstm_filters.len() - 1;
    for (l, &f) in cfg.convlstm_filters.iter().enumerate() {
        x = g.convlstm(&format!("convlstm{l}"), x, f, (k, k), l < last)?;
    }
    let flat_len: usize = g.shape(x).iter().product();
    let flat = g.reshape("flatten", x, &[flat_len])?;
    let fc = g.dense("fc_lstm", flat, cfg.fc_units, Activation::Relu)?;
    let joined = g.concat("with_seasonal", &[fc, seasonal], 0)?;
    let ybar = g.dense("ybar", joined, s * h, Activation::Identity)?;

    let mut notes = Vec::new();
    let output = if cfg.dae {
        let mut heads = Vec::with_capacity(clusters.len());
        let mut targets = Vec::new();
        for (j, members) in clusters.iter().enumerate() {
            let slots: Vec<usize> = members.iter().flat_map(|&m| (0..h).map(move |k| m * h + k)).collect();
            let dim = slots.len();
            let widths = scaled_dae_widths(&cfg.dae_widths, dim);
            if widths != cfg.dae_widths {
                notes.push(format!("dae{j}: {dim} outputs, widths scaled to {widths:?}"));
            }
            let gathered = g.gather(&format!("dae{j}.in"), ybar, 0, &slots)?;
            heads.push(dae_stack(&mut g, &format!("dae{j}"), gathered, dim, &widths, cfg.dae_activation, cfg.dropout)?);
            targets.extend(slots);
        }
        let all = g.concat("dae_outputs", &heads, 0)?;
        g.cluster_merge("merge", all, &targets, s * h)?
    } else {
        ybar
    };

    if let Some(pre) = pretrained {
        if !cfg.dae {
            return Err(ModelError::Config("pretrained heads given but dae is off".into()));
        }
        for head in pre {
            for (name, t) in head.params().iter() {
                let id = g
                    .params()
                    .find(name)
                    .ok_or_else(|| ModelError::Config(format!("pretrained parameter {name} has no slot")))?;
                if g.params().get(id).shape() != t.shape() {
                    return Err(ModelError::Config(format!(
                        "pretrained {name} has shape {:?}, slot has {:?}",
                        t.shape(),
                        g.params().get(id).shape()
                    )));
                }
                *g.params_mut().get_mut(id) = t.clone();
            }
        }
    }
    Ok((Network { graph: g, output, features, ybar }, notes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ForecasterConfig {
        ForecasterConfig {
            dae_widths: vec![8, 4, 8],
            ..ForecasterConfig::desk()
        }
    }

    #[test]
    fn output_shape_without_heads() {
        let cfg = ForecasterConfig { dae: false, ..small() };
        let (net, notes) = build_forecaster(&[vec![0, 1], vec![1, 2, 3]], 4, 3, &cfg, None, 1).unwrap();
        assert_eq!(net.graph.shape(net.output), &[16]);
        assert_eq!(net.graph.shape(net.features), &[6, 4, 6, 2]);
        assert_eq!(net.output, net.ybar);
        assert!(notes.is_empty());
    }

    #[test]
    fn shared_sensor_merges_both_heads() {
        let clusters = [vec![0, 1], vec![1, 2, 3]];
        let (net, _) = build_forecaster(&clusters, 4, 3, &small(), None, 1).unwrap();
        let merge = net.graph.layers().last().unwrap();
        let stdn_nn::LayerKind::ClusterMerge { targets, outputs } = &merge.kind else {
            panic!("last layer is {:?}", merge.kind);
        };
        assert_eq!(*outputs, 16);
        // sensor 1, horizon step 2 is slot 6; it appears once per cluster
        let sources: Vec<usize> = (0..targets.len()).filter(|&e| targets[e] == 6).collect();
        assert_eq!(sources, vec![6, 8 + 2]);
        for slot in [0, 3, 8, 15] {
            assert_eq!(targets.iter().filter(|&&t| t == slot).count(), 1);
        }
    }

    #[test]
    fn parameter_count_is_a_function_of_config() {
        let count = |seed| {
            let (net, _) = build_forecaster(&[vec![0, 1], vec![2, 3]], 4, 3, &small(), None, seed).unwrap();
            net.graph.params().count()
        };
        assert_eq!(count(1), count(2));
    }

    #[test]
    fn widths_scale_below_bottleneck() {
        assert_eq!(scaled_dae_widths(&[40, 20, 10, 20, 40], 12), vec![40, 20, 10, 20, 40]);
        assert_eq!(scaled_dae_widths(&[40, 20, 10, 20, 40], 5), vec![20, 10, 5, 10, 20]);
        assert_eq!(scaled_dae_widths(&[40, 20, 10, 20, 40], 1), vec![4, 2, 1, 2, 4]);
        let cfg = ForecasterConfig { horizon: 2, ..small() };
        let (_, notes) = build_forecaster(&[vec![0], vec![1, 2, 3]], 4, 3, &cfg, None, 1).unwrap();
        assert_eq!(notes.len(), 1);
    }

    #[test]
    fn pretrained_heads_are_copied() {
        let cfg = small();
        let (dae, _) = build_dae(1, 12, &cfg, 9).unwrap();
        let heads = [build_dae(0, 8, &cfg, 8).unwrap().0, dae.clone()];
        let (net, _) = build_forecaster(&[vec![0, 1], vec![1, 2, 3]], 4, 3, &cfg, Some(&heads), 1).unwrap();
        let id = net.graph.params().find("dae1.l1.w").unwrap();
        assert_eq!(net.graph.params().get(id), dae.params().get(dae.params().find("dae1.l1.w").unwrap()));
    }

    #[test]
    fn rejects_inconsistent_clusters() {
        let cfg = small();
        assert!(build_forecaster(&[vec![0, 1]], 4, 3, &cfg, None, 1).is_err());
        assert!(build_forecaster(&[vec![0, 1, 2, 3], vec![]], 4, 3, &cfg, None, 1).is_err());
        assert!(build_forecaster(&[vec![0, 1, 2, 7]], 4, 3, &cfg, None, 1).is_err());
    }
}
