//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to
//! stderr (outside the test harness capture) and then asserts it.
//!
//! Criteria 8 to 10 share one seed-pinned corridor and one pair of trained
//! models, with and without denoising heads.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stdn_core::cluster::{fhc, fuzzy_update, Element, FhcParams, MembershipMatrix};
use stdn_core::decompose::decompose_additive;
use stdn_core::dtw::{delta, dtw_distance, DistanceTable, RollingParams, Sequence};
use stdn_core::eval::{
    evaluate, expected_masked_fraction, inject_missing, ForecastSet, split_peak, synth_generate, EvalReport, Metric, MissingConfig,
    Regime, SynthConfig, DEFAULT_PEAK_OCCUPANCY,
};
use stdn_core::decompose::{decompose_causal, fit_seasonal_profile};
use stdn_core::panel::{apply_scale, fit_scale, SensorMeta, FLOW};
use stdn_model::{
    baseline_current, build_forecaster, cluster_sensors, dataset_loss, fit, make_windows, records_from_raw,
    records_from_stationary, test_anchors, train_steps, FitOptions, Forecaster, ForecasterConfig, WeekdayHourly,
    WindowData, WindowShape,
};
use stdn_nn::gradcheck::check;
use stdn_nn::{Activation, LayerGraph, Mode, Padding, ParamStore, Tape, Tensor, Var};

const DTW_PAIRS: usize = 500;
const DTW_BUDGET: Duration = Duration::from_secs(10);
const IDENTITY_PAIRS: usize = 1000;
const RECONSTRUCTION_TOL: f64 = 1e-9;
const CORRIDORS: usize = 50;
const CLAMP_TRIPLES: usize = 10_000;
const GRAD_STEP: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-4;
const GRAD_MAX_ELEMENTS: usize = 1000;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const OVERFIT_SAMPLES: usize = 32;
const OVERFIT_STEPS: usize = 2000;
const OVERFIT_MSE: f64 = 1e-3;
const OVERFIT_BUDGET: Duration = Duration::from_secs(5 * 60);
const E2E_SENSORS: usize = 24;
const E2E_DAYS: usize = 56;
const E2E_DATA_SEED: u64 = 2024;
const E2E_TRAIN_SEED: u64 = 7;
const E2E_BUDGET: Duration = Duration::from_secs(30 * 60);
const MISSING_SEEDS: [u64; 3] = [101, 202, 303];
const MASK_SENSORS: usize = 100;
const MASK_DAYS: usize = 28;
const MASK_TOL_PP: f64 = 0.3;

/// Runs the criteria one at a time so wall-clock budgets measure one test.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, what: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    // Bypasses the harness capture so the line shows for passing tests too.
    let _ = writeln!(std::io::stderr(), "criterion {n:>2}: {verdict}  {what}  [{detail}]");
}

fn int_sequence(rng: &mut ChaCha8Rng, dims: usize) -> Sequence {
    let len = rng.random_range(1..=8);
    Sequence::new(dims, (0..len * dims).map(|_| f64::from(rng.random_range(-9i32..=9))).collect()).unwrap()
}

/// Minimum alignment cost over every monotone path.
fn exhaustive_dtw(x: &Sequence, y: &Sequence) -> f64 {
    fn walk(x: &Sequence, y: &Sequence, i: usize, j: usize) -> f64 {
        let here = delta(x.row(i), y.row(j));
        if i + 1 == x.len() && j + 1 == y.len() {
            return here;
        }
        let mut best = f64::INFINITY;
        if i + 1 < x.len() {
            best = best.min(walk(x, y, i + 1, j));
        }
        if j + 1 < y.len() {
            best = best.min(walk(x, y, i, j + 1));
        }
        if i + 1 < x.len() && j + 1 < y.len() {
            best = best.min(walk(x, y, i + 1, j + 1));
        }
        here + best
    }
    walk(x, y, 0, 0)
}

#[test]
fn criterion_01_dtw_matches_exhaustive_search() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let clock = Instant::now();
    let mut mismatches = 0;
    for _ in 0..DTW_PAIRS {
        let k = rng.random_range(1..=3);
        let (x, y) = (int_sequence(&mut rng, k), int_sequence(&mut rng, k));
        if dtw_distance(&x, &y, false).unwrap() != exhaustive_dtw(&x, &y) {
            mismatches += 1;
        }
    }
    let elapsed = clock.elapsed();
    let pass = mismatches == 0 && elapsed < DTW_BUDGET;
    report(1, "DTW equals exhaustive minimum", pass, &format!("{mismatches}/{DTW_PAIRS} mismatches, {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn criterion_02_dtw_identities() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = 0;
    for _ in 0..IDENTITY_PAIRS {
        let k = rng.random_range(1..=3);
        let (x, y) = (int_sequence(&mut rng, k), int_sequence(&mut rng, k));
        let self_zero = dtw_distance(&x, &x, false).unwrap() == 0.0;
        let symmetric = dtw_distance(&x, &y, false).unwrap() == dtw_distance(&y, &x, false).unwrap();
        if !(self_zero && symmetric) {
            failures += 1;
        }
    }
    let pass = failures == 0;
    report(2, "d(x,x) = 0 and d(x,y) = d(y,x)", pass, &format!("{failures}/{IDENTITY_PAIRS} failures"));
    assert!(pass);
}

#[test]
fn criterion_03_decomposition() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_reconstruction = 0.0f64;
    let mut periodic = true;
    for _ in 0..100 {
        let period = rng.random_range(2..=12);
        let n = period * rng.random_range(2..=6) + rng.random_range(0..period);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let d = decompose_additive(&x, period).unwrap();
        for t in 0..n {
            worst_reconstruction = worst_reconstruction.max((d.seasonal[t] + d.trend[t] + d.residual[t] - x[t]).abs());
            if t + period < n && d.seasonal[t] != d.seasonal[t + period] {
                periodic = false;
            }
        }
    }
    let flat = decompose_additive(&[7.0; 16], 4).unwrap();
    let constant_ok = flat.trend.iter().all(|&v| (v - 7.0).abs() < RECONSTRUCTION_TOL)
        && flat.seasonal.iter().chain(&flat.residual).all(|v| v.abs() < RECONSTRUCTION_TOL);
    let cycle: Vec<f64> = [0.0, 1.0, 0.0, -1.0].repeat(8);
    let d = decompose_additive(&cycle, 4).unwrap();
    let cycle_ok = (2..cycle.len() - 2).all(|t| d.residual[t].abs() < RECONSTRUCTION_TOL)
        && (0..cycle.len()).all(|t| (d.seasonal[t] - cycle[t]).abs() < RECONSTRUCTION_TOL);
    let pass = worst_reconstruction < RECONSTRUCTION_TOL && periodic && constant_ok && cycle_ok;
    report(
        3,
        "S+T+R = X, periodic S, constant and cycle fixtures",
        pass,
        &format!("max |S+T+R-X| {worst_reconstruction:.1e}, periodic {periodic}, constant {constant_ok}, cycle {cycle_ok}"),
    );
    assert!(pass);
}

/// Four sensors one mile apart; by hand: p0-p1 at 1, then p2-p3 at 2 (c0-p2
/// sits at 3 and c0-p3 is not contiguous), then c0-c1 at max(4, 3, 5) = 5.
fn four_sensor_trace_matches() -> bool {
    let sensors: Vec<SensorMeta> = (0..4).map(|i| SensorMeta::mainline(format!("s{i}"), i as f64)).collect();
    let table =
        DistanceTable::from_pairs([((0, 1), 1.0), ((1, 2), 3.0), ((2, 3), 2.0), ((0, 2), 4.0), ((1, 3), 5.0)]).unwrap();
    let res = fhc(&table, &sensors, FhcParams::default()).unwrap();
    let log: Vec<(Element, Element, f64)> = res.merges.iter().map(|m| (m.a, m.b, m.distance)).collect();
    log == [
        (Element::Point(0), Element::Point(1), 1.0),
        (Element::Point(2), Element::Point(3), 2.0),
        (Element::Cluster(0), Element::Cluster(1), 5.0),
    ]
}

/// Memberships in [0, 1] and home clusters that are runs of adjacent sensors.
fn corridor_clusters_hold(mm: &MembershipMatrix, n: usize) -> bool {
    let bounded = mm.entries().all(|(_, mu)| (0.0..=1.0).contains(&mu));
    let mut homes: Vec<Vec<usize>> = vec![Vec::new(); mm.n_clusters()];
    for s in 0..n {
        match mm.home(s) {
            Some(h) => homes[h].push(s),
            None => return false,
        }
    }
    bounded && homes.iter().filter(|m| !m.is_empty()).all(|m| m[m.len() - 1] - m[0] + 1 == m.len())
}

#[test]
fn criterion_04_clustering() {
    let _serial = serial();
    let trace = four_sensor_trace_matches();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad_corridors = 0;
    for _ in 0..CORRIDORS {
        let n = rng.random_range(4..=20);
        let mut post = 0.0;
        let sensors: Vec<SensorMeta> = (0..n)
            .map(|i| {
                post += rng.random_range(0.2..2.5);
                SensorMeta::mainline(format!("s{i}"), post)
            })
            .collect();
        let mut table = DistanceTable::new(1);
        for i in 0..n {
            for j in i + 1..n {
                if sensors[j].milepost - sensors[i].milepost <= 3.0 {
                    table.insert(i, j, rng.random_range(0.0..10.0)).unwrap();
                }
            }
        }
        let params = FhcParams { max_avg_span_miles: rng.random_range(0.5..8.0), ..FhcParams::default() };
        let res = fhc(&table, &sensors, params).unwrap();
        if !corridor_clusters_hold(&res.memberships, n) {
            bad_corridors += 1;
        }
    }
    let mut increases = 0;
    for _ in 0..CLAMP_TRIPLES {
        let d = rng.random_range(0.0..20.0);
        let others: Vec<f64> = (0..rng.random_range(1..=4)).map(|_| rng.random_range(0.0..20.0)).collect();
        let m = rng.random_range(1.05..4.0);
        if fuzzy_update(d, &others, m).unwrap() > d {
            increases += 1;
        }
    }
    let pass = trace && bad_corridors == 0 && increases == 0;
    report(
        4,
        "merge trace, memberships, contiguity, clamp",
        pass,
        &format!("trace {trace}, {bad_corridors}/{CORRIDORS} bad corridors, {increases}/{CLAMP_TRIPLES} clamp increases"),
    );
    assert!(pass);
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn scaled(t: &Tensor, k: f64) -> Tensor {
    Tensor::new(t.shape(), t.data().iter().map(|v| k * v).collect()).unwrap()
}

fn randomize_params(g: &mut LayerGraph, rng: &mut ChaCha8Rng) {
    for id in 0..g.params().len() {
        let t = random_tensor(g.params().get(id).shape(), rng);
        *g.params_mut().get_mut(id) = scaled(&t, 0.5);
    }
}

/// Largest relative gradient error of a graph under MSE against a random
/// target, with dropout masks frozen by re-seeding. Also returns the largest
/// tensor size involved.
fn graph_check(g: &mut LayerGraph, inputs: &[(&str, Tensor)], out: usize, rng: &mut ChaCha8Rng) -> (f64, usize) {
    let batch = inputs[0].1.shape()[0];
    let n: usize = g.shape(out).iter().product::<usize>() * batch;
    let target: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let largest = inputs
        .iter()
        .map(|(_, t)| t.len())
        .chain((0..g.params().len()).map(|id| g.params().get(id).len()))
        .max()
        .unwrap_or(0);
    let layers = g.clone();
    let loss = |tape: &mut Tape, store: &ParamStore| -> stdn_nn::Result<Var> {
        let mut graph = layers.clone();
        *graph.params_mut() = store.clone();
        let named: Vec<(&str, &Tensor)> = inputs.iter().map(|(k, v)| (*k, v)).collect();
        let mut frozen = ChaCha8Rng::seed_from_u64(17);
        let vars = graph.forward(tape, &named, Mode::Training(&mut frozen))?;
        tape.mse(vars[out], &target)
    };
    let worst = check(g.params_mut(), loss, GRAD_STEP, 200).unwrap().iter().map(|r| r.rel_error).fold(0.0, f64::max);
    (worst, largest)
}

fn composed_graph_check(rng: &mut ChaCha8Rng) -> (f64, usize) {
    let cfg = ForecasterConfig {
        window: 4,
        horizon: 2,
        conv_filters: vec![2, 2],
        kernel_time: 2,
        pool: 1,
        projection_features: 1,
        convlstm_filters: vec![2, 2],
        convlstm_kernel: 3,
        fc_units: 4,
        dae: true,
        dae_widths: vec![3, 2, 3],
        dropout: 0.2,
        ..ForecasterConfig::desk()
    };
    let clusters = [vec![0, 1, 2], vec![2, 3]];
    let (mut net, _) = build_forecaster(&clusters, 4, 3, &cfg, None, 5).unwrap();
    randomize_params(&mut net.graph, rng);
    let inputs = [
        ("residual", random_tensor(&[2, 4, 4, 3], rng)),
        ("trend", random_tensor(&[2, 4, 4, 3], rng)),
        ("seasonal", random_tensor(&[2, 4 * (4 + 2)], rng)),
    ];
    graph_check(&mut net.graph, &inputs, net.output, rng)
}

fn layer_graph_checks(rng: &mut ChaCha8Rng) -> Vec<(&'static str, (f64, usize))> {
    let mut out = Vec::new();

    let mut g = LayerGraph::new(1);
    let x = g.input("x", &[3, 4]).unwrap();
    let a = g.dense("a", x, 5, Activation::Tanh).unwrap();
    let b = g.dense("b", a, 4, Activation::Sigmoid).unwrap();
    let c = g.dense("c", b, 3, Activation::Relu).unwrap();
    randomize_params(&mut g, rng);
    out.push(("dense", graph_check(&mut g, &[("x", random_tensor(&[2, 3, 4], rng))], c, rng)));

    let mut g = LayerGraph::new(2);
    let x = g.input("x", &[6, 6, 2]).unwrap();
    let c1 = g.conv2d("c1", x, (3, 3), 3, Padding::Same, Activation::Tanh).unwrap();
    let c2 = g.conv2d("c2", c1, (3, 3), 2, Padding::Valid, Activation::Identity).unwrap();
    let p = g.maxpool("p", c2, (2, 2)).unwrap();
    let r = g.reshape("r", p, &[8]).unwrap();
    let d = g.dense("d", r, 3, Activation::Identity).unwrap();
    randomize_params(&mut g, rng);
    out.push(("conv2d, maxpool, reshape", graph_check(&mut g, &[("x", random_tensor(&[2, 6, 6, 2], rng))], d, rng)));

    let mut g = LayerGraph::new(3);
    let x = g.input("r", &[5, 6, 3]).unwrap();
    let mk = g.multikernel_conv("mk", x, &[vec![0, 1, 2], vec![2, 3], vec![3, 4]], 2, &[3, 2], 2).unwrap();
    let d = g.dense("d", mk, 4, Activation::Identity).unwrap();
    randomize_params(&mut g, rng);
    out.push(("multikernel conv", graph_check(&mut g, &[("r", random_tensor(&[2, 5, 6, 3], rng))], d, rng)));

    let mut g = LayerGraph::new(4);
    let x = g.input("x", &[3, 4, 2, 2]).unwrap();
    let l1 = g.convlstm("l1", x, 3, (3, 3), true).unwrap();
    let l2 = g.convlstm("l2", l1, 2, (3, 3), false).unwrap();
    randomize_params(&mut g, rng);
    out.push(("convlstm", graph_check(&mut g, &[("x", random_tensor(&[2, 3, 4, 2, 2], rng))], l2, rng)));

    let mut g = LayerGraph::new(5);
    let x = g.input("x", &[6]).unwrap();
    let a = g.dense("a", x, 8, Activation::Tanh).unwrap();
    let dr = g.dropout("drop", a, 0.3).unwrap();
    let b = g.dense("b", dr, 5, Activation::Identity).unwrap();
    let gathered = g.gather("g", b, 0, &[0, 1, 2, 2, 3, 4]).unwrap();
    let m = g.cluster_merge("m", gathered, &[0, 1, 2, 2, 3, 3], 4).unwrap();
    let cat = g.concat("cat", &[m, m], 0).unwrap();
    randomize_params(&mut g, rng);
    out.push(("dropout, gather, merge, concat", graph_check(&mut g, &[("x", random_tensor(&[3, 6], rng))], cat, rng)));
    out
}

#[test]
fn criterion_05_gradient_checks() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let clock = Instant::now();
    let mut results = layer_graph_checks(&mut rng);
    results.push(("composed forecaster", composed_graph_check(&mut rng)));
    let elapsed = clock.elapsed();
    let worst = results.iter().map(|(_, (e, _))| *e).fold(0.0, f64::max);
    let largest = results.iter().map(|(_, (_, n))| *n).max().unwrap_or(0);
    let pass = worst < GRAD_TOL && largest <= GRAD_MAX_ELEMENTS && elapsed < GRAD_BUDGET;
    let detail: Vec<String> = results.iter().map(|(name, (e, _))| format!("{name} {e:.1e}")).collect();
    report(
        5,
        "finite differences match backprop",
        pass,
        &format!("{}; largest tensor {largest}, {elapsed:.2?}", detail.join(", ")),
    );
    assert!(pass);
}

#[test]
fn criterion_06_zero_convlstm_outputs_zero() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut g = LayerGraph::new(6);
    let x = g.input("x", &[5, 3, 3, 2]).unwrap();
    let l = g.convlstm("l", x, 4, (3, 3), true).unwrap();
    for id in 0..g.params().len() {
        let shape = g.params().get(id).shape().to_vec();
        *g.params_mut().get_mut(id) = Tensor::zeros(&shape);
    }
    let input = scaled(&random_tensor(&[2, 5, 3, 3, 2], &mut rng), 10.0);
    let mut tape = Tape::new();
    let vars = g.forward(&mut tape, &[("x", &input)], Mode::Inference).unwrap();
    let h = tape.value(vars[l]).data().to_vec();
    let nonzero = h.iter().filter(|v| **v != 0.0).count();
    let pass = nonzero == 0 && !h.is_empty();
    report(6, "zero-parameter ConvLSTM gives h = 0", pass, &format!("{nonzero}/{} nonzero", h.len()));
    assert!(pass);
}

#[test]
fn criterion_07_overfit_probe() {
    let _serial = serial();
    let clock = Instant::now();
    let raw = synth_generate(&SynthConfig::default(), E2E_SENSORS, 7, 7).unwrap();
    // Head dropout is there to stop memorization, so the probe leaves the heads off.
    let cfg = ForecasterConfig { dae: false, ..ForecasterConfig::desk() };
    let n = raw.n_steps();
    let scaling = fit_scale(&raw, 0..n).unwrap();
    let scaled = apply_scale(&raw, &scaling).unwrap();
    let profile = fit_seasonal_profile(&scaled, 0..n).unwrap();
    let decomposition = decompose_causal(&scaled, &profile).unwrap();
    let samples: Vec<_> = make_windows(&scaled, &decomposition, cfg.window, cfg.horizon, n / 2..n)
        .unwrap()
        .into_iter()
        .step_by(7)
        .take(OVERFIT_SAMPLES)
        .collect();
    let clusters = cluster_sensors(&raw, 0..n, &RollingParams::default(), FhcParams::default()).unwrap();
    let (mut network, _) = build_forecaster(clusters.memberships.clusters(), E2E_SENSORS, 3, &cfg, None, 7).unwrap();
    let shape = WindowShape { sensors: E2E_SENSORS, features: 3, window: cfg.window, horizon: cfg.horizon };
    let data = WindowData { samples: &samples, shape };
    let opts = FitOptions {
        epochs: OVERFIT_STEPS,
        batch: OVERFIT_SAMPLES,
        learning_rate: cfg.learning_rate,
        max_steps: Some(OVERFIT_STEPS),
    };
    let history = fit(&mut network.graph, network.output, &data, None, &opts, 7).unwrap();
    let mse = dataset_loss(&network.graph, network.output, &data, OVERFIT_SAMPLES).unwrap();
    let elapsed = clock.elapsed();
    let pass = samples.len() == OVERFIT_SAMPLES && history.steps <= OVERFIT_STEPS && mse < OVERFIT_MSE && elapsed < OVERFIT_BUDGET;
    report(
        7,
        "desk model overfits 32 samples",
        pass,
        &format!("training MSE {mse:.2e} after {} steps, {elapsed:.2?}", history.steps),
    );
    assert!(pass);
}

/// Everything criteria 8 to 10 read from the shared end-to-end run.
struct EndToEnd {
    plain: EvalReport,
    with_dae: EvalReport,
    current: EvalReport,
    weekly: EvalReport,
    /// Pooled MAE increase under injected missing data, one entry per seed.
    plain_increase: Vec<f64>,
    dae_increase: Vec<f64>,
    elapsed: Duration,
}

fn end_to_end_config() -> ForecasterConfig {
    ForecasterConfig::desk()
}

fn pooled_mae(r: &EvalReport) -> f64 {
    r.get(Metric::Mae, None, Regime::All).unwrap()
}

fn end_to_end() -> &'static EndToEnd {
    static RUN: OnceLock<EndToEnd> = OnceLock::new();
    RUN.get_or_init(|| {
        let clock = Instant::now();
        let raw = synth_generate(&SynthConfig::default(), E2E_SENSORS, E2E_DAYS, E2E_DATA_SEED).unwrap();
        let cfg = end_to_end_config();
        let train_end = train_steps(&raw, &cfg).unwrap();
        let clusters = cluster_sensors(&raw, 0..train_end, &RollingParams::default(), FhcParams::default()).unwrap();
        let anchors = test_anchors(train_end, raw.n_steps());
        let part = split_peak(&raw, DEFAULT_PEAK_OCCUPANCY).unwrap();
        let score = |name: &str, set: &ForecastSet| evaluate(name, E2E_TRAIN_SEED, "acceptance", set, &part).unwrap();

        let train = |dae: bool| {
            let cfg = ForecasterConfig { dae, ..cfg.clone() };
            Forecaster::train(&raw, &clusters.memberships, &cfg, E2E_TRAIN_SEED).unwrap().forecaster
        };
        let plain_model = train(false);
        let dae_model = train(true);

        let prep = plain_model.prepare(&raw).unwrap();
        let samples = plain_model.windows(&prep, anchors.clone()).unwrap();
        let h = cfg.horizon;
        let last: Vec<f64> =
            samples.iter().flat_map(|s| baseline_current(s, cfg.window, raw.n_features(), FLOW)).collect();
        let current = records_from_stationary(&prep, &raw, &plain_model.scaling, &samples, &last, h).unwrap();
        let table = WeekdayHourly::fit(&raw, 0..train_end, FLOW, 60).unwrap();
        let weekly = records_from_raw(&prep, &raw, &plain_model.scaling, &samples, h, |_, i, t| {
            table.predict(i, raw.timestamp(t))
        })
        .unwrap();

        let clean = |f: &Forecaster| score("model", &f.forecast(&raw, &raw, anchors.clone()).unwrap());
        let plain = clean(&plain_model);
        let with_dae = clean(&dae_model);
        let increase = |f: &Forecaster, clean: &EvalReport| -> Vec<f64> {
            MISSING_SEEDS
                .iter()
                .map(|&seed| {
                    let inj = inject_missing(&raw, seed, &MissingConfig::default()).unwrap();
                    let set = f.forecast(&inj.input, &inj.truth, anchors.clone()).unwrap();
                    pooled_mae(&score("model", &set)) - pooled_mae(clean)
                })
                .collect()
        };
        EndToEnd {
            plain_increase: increase(&plain_model, &plain),
            dae_increase: increase(&dae_model, &with_dae),
            plain,
            with_dae,
            current: score("baseline_current", &current),
            weekly: score("baseline_weekday_hourly", &weekly),
            elapsed: clock.elapsed(),
        }
    })
}

fn by_horizon(r: &EvalReport, h: usize) -> Vec<f64> {
    (1..=h).map(|k| r.get(Metric::Mae, Some(k), Regime::All).unwrap()).collect()
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2}")).collect();
    format!("[{}]", parts.join(", "))
}

#[test]
fn criterion_08_model_beats_both_baselines() {
    let _serial = serial();
    let e = end_to_end();
    let h = end_to_end_config().horizon;
    let model = by_horizon(&e.plain, h);
    let dae = by_horizon(&e.with_dae, h);
    let current = by_horizon(&e.current, h);
    let weekly = by_horizon(&e.weekly, h);
    let beats = |m: &[f64]| (0..h).all(|k| m[k] < current[k] && m[k] < weekly[k]);
    let pass = (beats(&model) || beats(&dae)) && e.elapsed < E2E_BUDGET;
    report(
        8,
        "test MAE below both baselines at every horizon",
        pass,
        &format!(
            "model {}, with DAE {}, current {}, weekday-hourly {}, {:.0?}",
            fmt(&model),
            fmt(&dae),
            fmt(&current),
            fmt(&weekly),
            e.elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_peak_gain_exceeds_off_peak_gain() {
    let _serial = serial();
    let e = end_to_end();
    let gain = |regime| {
        e.current.get(Metric::ResidualMae, None, regime).unwrap() - e.plain.get(Metric::ResidualMae, None, regime).unwrap()
    };
    let (peak, off) = (gain(Regime::Peak), gain(Regime::OffPeak));
    let pass = peak > 0.0 && peak > off;
    report(
        9,
        "peak residual-MAE gain over current exceeds off-peak gain",
        pass,
        &format!("peak {peak:.2}, off-peak {off:.2}, ratio {:.2}", peak / off),
    );
    assert!(pass);
}

#[test]
fn criterion_10_dae_is_no_less_robust_to_missing_data() {
    let _serial = serial();
    let e = end_to_end();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (dae, plain) = (mean(&e.dae_increase), mean(&e.plain_increase));
    let pass = dae <= plain;
    report(
        10,
        "MAE increase with DAE <= without, mean of 3 seeds",
        pass,
        &format!("with DAE {dae:.3} {}, without {plain:.3} {}", fmt(&e.dae_increase), fmt(&e.plain_increase)),
    );
    assert!(pass);
}

#[test]
fn criterion_11_masked_fraction() {
    let _serial = serial();
    let raw = synth_generate(&SynthConfig { noise_sd: 0.0, ..SynthConfig::default() }, MASK_SENSORS, MASK_DAYS, 11)
        .unwrap();
    let cfg = MissingConfig::default();
    let inj = inject_missing(&raw, 11, &cfg).unwrap();
    let empirical = inj.mask.iter().filter(|&&m| m).count() as f64 / inj.mask.len() as f64;
    let expected = expected_masked_fraction(&cfg);
    let gap_pp = 100.0 * (empirical - expected).abs();
    let pass = gap_pp <= MASK_TOL_PP;
    report(
        11,
        "masked fraction matches expectation",
        pass,
        &format!("empirical {:.3}%, expected {:.3}%, gap {gap_pp:.3} pp", 100.0 * empirical, 100.0 * expected),
    );
    assert!(pass);
}

/// Every file under `dir` by relative path. The training log's wall-clock
/// column is dropped.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(&p).unwrap();
            if rel.ends_with("train_log.csv") || rel.contains("pretrain_log_") {
                let text = String::from_utf8(bytes).unwrap();
                let kept: Vec<String> =
                    text.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string()).collect();
                bytes = kept.join("\n").into_bytes();
            }
            out.insert(rel, bytes);
        }
    }
    out
}

fn run_stdn(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_stdn")).args(args).output().unwrap();
    assert!(out.status.success(), "stdn {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn criterion_12_determinism() {
    let _serial = serial();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.cfg");
    std::fs::write(
        &cfg,
        "synth.sensors = 6\nsynth.days = 3\nmodel.train_days = 2\nmodel.epochs = 2\nmodel.pretrain_epochs = 2\n\
         model.conv_filters = 2,4\nmodel.convlstm_filters = 2,2\nmodel.fc_units = 8\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let out = d.join("out");
    let o = out.to_str().unwrap();
    let data = out.join("synth/data.csv");
    let meta = out.join("synth/meta.csv");
    let (data, meta) = (data.to_str().unwrap(), meta.to_str().unwrap());
    let mut runs = Vec::new();
    for _ in 0..2 {
        if out.exists() {
            std::fs::remove_dir_all(&out).unwrap();
        }
        run_stdn(&["synth", "--config", c, "--seed", "12", "--out", &format!("{o}/synth")]);
        run_stdn(&["cluster", "--config", c, "--data", data, "--meta", meta, "--out", &format!("{o}/cluster")]);
        run_stdn(&["train", "--config", c, "--seed", "12", "--data", data, "--meta", meta, "--out", &format!("{o}/train")]);
        runs.push(snapshot(&out));
    }
    let differing: Vec<&String> = runs[0].iter().filter(|(k, v)| runs[1].get(*k) != Some(*v)).map(|(k, _)| k).collect();
    let same_files = runs[0].keys().eq(runs[1].keys());
    let pass = same_files && differing.is_empty() && !runs[0].is_empty();
    report(
        12,
        "repeated synth, cluster and train runs are byte-identical",
        pass,
        &format!("{} files compared, differing {differing:?}", runs[0].len()),
    );
    assert!(pass);
}
