//! Property tests for the core invariants.

use proptest::prelude::*;

use stdn_core::cluster::{fhc, fuzzy_update, FhcParams};
use stdn_core::decompose::decompose_additive;
use stdn_core::dtw::{delta, dtw_distance, DistanceTable, Sequence};
use stdn_core::eval::{inject_missing, mae, rmse, MissingConfig};
use stdn_core::panel::{apply_scale, filter_complete, fit_scale, invert_scale, Panel, SensorMeta};

/// Minimum alignment cost by exhaustive enumeration of monotone paths.
fn brute_dtw(x: &Sequence, y: &Sequence) -> f64 {
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

fn int_seq(dims: usize, max_len: usize) -> impl Strategy<Value = Sequence> {
    (1..=max_len).prop_flat_map(move |n| {
        prop::collection::vec(-9i32..=9, n * dims)
            .prop_map(move |v| Sequence::new(dims, v.into_iter().map(f64::from).collect()).unwrap())
    })
}

fn seq_pair() -> impl Strategy<Value = (Sequence, Sequence)> {
    (1usize..=3).prop_flat_map(|k| (int_seq(k, 8), int_seq(k, 8)))
}

fn panel_from(n: usize, steps: usize, values: Vec<f64>, observed: Vec<bool>) -> Panel {
    let start = chrono::NaiveDate::from_ymd_opt(2016, 1, 4)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    Panel::new(
        (0..n).map(|i| SensorMeta::mainline(format!("s{i}"), i as f64)).collect(),
        start,
        5,
        steps,
        vec!["flow".into(), "occupancy".into(), "speed".into()],
        values,
        observed,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dtw_matches_exhaustive_paths((x, y) in seq_pair()) {
        prop_assert_eq!(dtw_distance(&x, &y, false).unwrap(), brute_dtw(&x, &y));
    }

    #[test]
    fn dtw_identity_and_symmetry((x, y) in seq_pair()) {
        prop_assert_eq!(dtw_distance(&x, &x, false).unwrap(), 0.0);
        prop_assert_eq!(dtw_distance(&x, &y, false).unwrap(), dtw_distance(&y, &x, false).unwrap());
        prop_assert_eq!(dtw_distance(&x, &y, true).unwrap(), dtw_distance(&y, &x, true).unwrap());
    }

    #[test]
    fn dtw_scales_linearly((x, y) in seq_pair(), lambda in 0.0f64..5.0) {
        let scale = |s: &Sequence| {
            let rows: Vec<Vec<f64>> = (0..s.len()).map(|i| s.row(i).iter().map(|v| v * lambda).collect()).collect();
            Sequence::from_rows(&rows).unwrap()
        };
        let d = dtw_distance(&x, &y, false).unwrap();
        let ds = dtw_distance(&scale(&x), &scale(&y), false).unwrap();
        prop_assert!((ds - lambda * d).abs() <= 1e-9 * (1.0 + ds.abs()));
    }

    #[test]
    fn decomposition_reconstructs(
        period in 2usize..8,
        cycles in 2usize..6,
        extra in 0usize..7,
        seed in prop::collection::vec(-50.0f64..50.0, 64),
    ) {
        let n = period * cycles + extra;
        let x: Vec<f64> = (0..n).map(|t| seed[t % 64] + 0.3 * t as f64).collect();
        let d = decompose_additive(&x, period).unwrap();
        let profile_sum: f64 = d.seasonal_profile().iter().sum();
        prop_assert!(profile_sum.abs() < 1e-9);
        for t in 0..n {
            prop_assert!((d.seasonal[t] + d.trend[t] + d.residual[t] - x[t]).abs() < 1e-9);
            prop_assert_eq!(d.seasonal[t], d.seasonal[t % period]);
        }
    }

    #[test]
    fn decomposition_shift_equivariant(
        period in 2usize..6,
        x in prop::collection::vec(-10.0f64..10.0, 24..40),
        c in -100.0f64..100.0,
    ) {
        let a = decompose_additive(&x, period).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let b = decompose_additive(&shifted, period).unwrap();
        for t in 0..x.len() {
            prop_assert!((b.trend[t] - a.trend[t] - c).abs() < 1e-9);
            prop_assert!((b.seasonal[t] - a.seasonal[t]).abs() < 1e-9);
            prop_assert!((b.residual[t] - a.residual[t]).abs() < 1e-9);
        }
    }

    #[test]
    fn scaling_round_trip(values in prop::collection::vec(-1e3f64..1e3, 2 * 6 * 3), split in 1usize..6) {
        let p = panel_from(2, 6, values, vec![true; 36]);
        let s = fit_scale(&p, 0..split).unwrap();
        let scaled = apply_scale(&p, &s).unwrap();
        let back = invert_scale(&scaled, &s).unwrap();
        for i in 0..2 {
            for t in 0..6 {
                for f in 0..3 {
                    let v = p.value(i, t, f);
                    prop_assert!((back.value(i, t, f) - v).abs() <= 1e-12 * v.abs().max(1.0));
                    if t < split {
                        let z = scaled.value(i, t, f);
                        prop_assert!((0.0..=1.0).contains(&z));
                    }
                }
            }
        }
    }

    #[test]
    fn filter_is_idempotent(mask in prop::collection::vec(prop::bool::weighted(0.9), 4 * 10 * 3), frac in 0.5f64..0.95) {
        let values = vec![1.0; mask.len()];
        let p = panel_from(4, 10, values, mask);
        if let Ok(once) = filter_complete(&p, frac) {
            prop_assert_eq!(filter_complete(&once, frac).unwrap(), once);
        }
    }

    #[test]
    fn fuzzy_update_never_increases(d in 0.0f64..100.0, others in prop::collection::vec(0.0f64..100.0, 1..5), m in 1.01f64..5.0) {
        prop_assert!(fuzzy_update(d, &others, m).unwrap() <= d);
    }

    #[test]
    fn rmse_dominates_mae(y in prop::collection::vec(-1e3f64..1e3, 1..50), noise in prop::collection::vec(-10.0f64..10.0, 50)) {
        let yhat: Vec<f64> = y.iter().zip(&noise).map(|(a, b)| a + b).collect();
        prop_assert!(rmse(&y, &yhat).unwrap() >= mae(&y, &yhat).unwrap() - 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn clusters_are_contiguous_segments(
        gaps in prop::collection::vec(0.2f64..3.0, 3..16),
        dists in prop::collection::vec(0.0f64..10.0, 64),
        span in 0.5f64..12.0,
    ) {
        let mut posts = vec![0.0];
        for g in &gaps {
            posts.push(posts.last().unwrap() + g);
        }
        let n = posts.len();
        let sensors: Vec<SensorMeta> = posts.iter().enumerate().map(|(i, &m)| SensorMeta::mainline(format!("s{i}"), m)).collect();
        let mut table = DistanceTable::new(1);
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..(i + 3).min(n) {
                table.insert(i, j, dists[k % 64]).unwrap();
                k += 1;
            }
        }
        let params = FhcParams { max_avg_span_miles: span, ..FhcParams::default() };
        let res = fhc(&table, &sensors, params).unwrap();
        let mm = &res.memberships;
        for ((_, _), mu) in mm.entries() {
            prop_assert!((0.0..=1.0).contains(&mu));
        }
        let mut homes: Vec<Vec<usize>> = vec![Vec::new(); mm.n_clusters()];
        for s in 0..n {
            let h = mm.home(s).unwrap();
            prop_assert!(mm.membership(s, h) >= mm.threshold());
            homes[h].push(s);
        }
        for members in homes.iter().filter(|m| !m.is_empty()) {
            prop_assert_eq!(members.last().unwrap() - members[0] + 1, members.len());
        }
        for (c, members) in mm.clusters().iter().enumerate() {
            for s in 0..n {
                prop_assert_eq!(members.contains(&s), mm.membership(s, c) >= mm.threshold());
            }
        }
    }

    #[test]
    fn injection_leaves_unmasked_cells(seed in any::<u64>()) {
        let steps = 7 * 24 * 12;
        let values: Vec<f64> = (0..3 * steps * 3).map(|i| (i % 31) as f64).collect();
        let p = panel_from(3, steps, values, vec![true; 3 * steps * 3]);
        let inj = inject_missing(&p, seed, &MissingConfig::default()).unwrap();
        for (idx, &masked) in inj.mask.iter().enumerate() {
            if !masked {
                prop_assert_eq!(inj.input.values()[idx], p.values()[idx]);
            }
        }
    }
}
