//! Structure of the synthetic corridor as seen through the analysis modules.

use stdn_core::decompose::{decompose_panel, Component};
use stdn_core::dtw::{
    dtw_distance, high_interaction_windows, neighbor_pairs, panel_distance_table, window_starts, zscore_series,
    RollingParams, SeriesBlock,
};
use stdn_core::eval::mean_occupancy;
use stdn_core::eval::{synth_generate, SynthConfig};
use stdn_core::panel::OCCUPANCY;

fn cross_correlation(a: &[f64], b: &[f64], lag: usize) -> f64 {
    let n = a.len() - lag;
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[lag..].iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for t in 0..n {
        let x = a[t] - ma;
        let y = b[t + lag] - mb;
        num += x * y;
        va += x * x;
        vb += y * y;
    }
    num / (va * vb).sqrt()
}

#[test]
fn downstream_residual_lags_by_propagation_delay() {
    let cfg = SynthConfig::default();
    let p = synth_generate(&cfg, 6, 28, 5).unwrap();
    let d = decompose_panel(&p, p.steps_per_day()).unwrap();
    for i in 0..5 {
        let up = d.series(i, OCCUPANCY).residual;
        let down = d.series(i + 1, OCCUPANCY).residual;
        let best = (0..=12)
            .max_by(|&a, &b| cross_correlation(&up, &down, a).total_cmp(&cross_correlation(&up, &down, b)))
            .unwrap();
        assert_eq!(best, cfg.propagation_delay_steps, "pair ({i}, {})", i + 1);
    }
}

#[test]
fn adjacent_residuals_are_closer_than_distant_ones() {
    let p = synth_generate(&SynthConfig::default(), 12, 14, 9).unwrap();
    let d = decompose_panel(&p, p.steps_per_day()).unwrap();
    let (n, steps, k) = p.shape();
    let z = zscore_series(d.block(Component::Residual), n, steps, k);
    let block = SeriesBlock::new(&z, n, steps, k).unwrap();
    let window = 8;
    let active = high_interaction_windows(&mean_occupancy(&p), window, window, 0.75).unwrap();
    let starts: Vec<usize> = window_starts(steps, window, window)
        .into_iter()
        .zip(&active)
        .filter(|(_, &a)| a)
        .map(|(s, _)| s)
        .collect();
    let mean_pair = |i: usize, j: usize| {
        starts
            .iter()
            .map(|&s| dtw_distance(&block.window(i, s, window), &block.window(j, s, window), false).unwrap())
            .sum::<f64>()
            / starts.len() as f64
    };
    let near: Vec<f64> = (0..n - 1).map(|i| mean_pair(i, i + 1)).collect();
    let far: Vec<f64> = (0..n - 5).map(|i| mean_pair(i, i + 5)).collect();
    let near_mean = near.iter().sum::<f64>() / near.len() as f64;
    let far_mean = far.iter().sum::<f64>() / far.len() as f64;
    assert!(near_mean < far_mean, "near {near_mean} far {far_mean}");
}

#[test]
fn panel_table_covers_neighbors_only() {
    let p = synth_generate(&SynthConfig::default(), 8, 7, 2).unwrap();
    let d = decompose_panel(&p, p.steps_per_day()).unwrap();
    let params = RollingParams { radius_miles: 2.0, ..RollingParams::default() };
    let table = panel_distance_table(&p, d.block(Component::Residual), &params).unwrap();
    let pairs: Vec<(usize, usize)> = table.iter().map(|(pair, _)| pair).collect();
    assert_eq!(pairs, neighbor_pairs(p.sensors(), 2.0));
    assert!(table.iter().all(|(_, d)| d.is_finite() && d >= 0.0));
    assert!(table.window_count() > 0 && table.window_count() < p.n_steps() / 8);
}
