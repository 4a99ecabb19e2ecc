mod common;

use common::*;
use lmf_core::lp::{transport_lp, w2_lp_oracle};
use lmf_core::measure::DiscreteFiber;
use lmf_core::transport::{
    geodesic, l_optimal_map, metric_derivative, w2_fiber, wl_distance, wl_distance_fibers, Quantile,
};
use lmf_core::{GridMeasure, MeasureCurve};
use proptest::prelude::*;

fn discrete() -> impl Strategy<Value = DiscreteFiber> {
    prop::collection::vec((-3.0..3.0f64, 0.05..1.0f64), 1..=5).prop_map(|raw| {
        let total: f64 = raw.iter().map(|a| a.1).sum();
        let mut atoms: Vec<(f64, f64)> = raw.iter().map(|&(t, m)| (t, m / total)).collect();
        let n = atoms.len();
        let head: f64 = atoms[..n - 1].iter().map(|a| a.1).sum();
        atoms[n - 1].1 = 1.0 - head;
        DiscreteFiber::new(atoms).unwrap()
    })
}

fn measure_seed() -> impl Strategy<Value = u64> {
    any::<u64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn quantile_formula_matches_lp(a in discrete(), b in discrete()) {
        let q = w2_fiber(&a, &b).unwrap();
        let lp = w2_lp_oracle(&a, &b).unwrap();
        prop_assert!((q - lp).abs() <= 1e-9, "{} vs {}", q, lp);
    }

    #[test]
    fn metric_axioms(seed in measure_seed()) {
        let mut r = rng(seed);
        let g = grid(3, 48);
        let (a, b, c) = (random_measure(g, &mut r), random_measure(g, &mut r), random_measure(g, &mut r));
        let ab = wl_distance(&a, &b).unwrap();
        prop_assert_eq!(ab, wl_distance(&b, &a).unwrap());
        prop_assert_eq!(wl_distance(&a, &a).unwrap(), 0.0);
        prop_assert!(ab > 0.0);
        prop_assert!(ab + wl_distance(&b, &c).unwrap() >= wl_distance(&a, &c).unwrap() - 1e-12);
    }

    #[test]
    fn fibered_distance_dominates_flattened(fa in prop::collection::vec(discrete(), 4), fb in prop::collection::vec(discrete(), 4)) {
        let q = |v: &[DiscreteFiber]| v.iter().map(|f| f.quantile().unwrap()).collect::<Vec<_>>();
        let wl = wl_distance_fibers(&q(&fa), &q(&fb)).unwrap();
        let flat = |v: &[DiscreteFiber]| -> Vec<(f64, f64, f64)> {
            v.iter().enumerate().flat_map(|(i, f)| {
                f.atoms().iter().map(move |&(t, m)| (i as f64 / 4.0, t, m / 4.0))
            }).collect()
        };
        let (a, b) = (flat(&fa), flat(&fb));
        let sa: Vec<f64> = a.iter().map(|x| x.2).collect();
        let mut sb: Vec<f64> = b.iter().map(|x| x.2).collect();
        // equalize the total masses exactly
        let diff: f64 = sa.iter().sum::<f64>() - sb.iter().sum::<f64>();
        *sb.last_mut().unwrap() += diff;
        let sol = transport_lp(&sa, &sb, |i, j| {
            let dx = (a[i].0 - b[j].0).abs();
            dx.min(1.0 - dx).powi(2) + (a[i].1 - b[j].1).powi(2)
        }).unwrap();
        prop_assert!(wl >= sol.cost.max(0.0).sqrt() - 1e-8);
    }
}

#[test]
fn optimal_maps_are_monotone_and_realize_the_distance() {
    let mut r = rng(11);
    for _ in 0..20 {
        let g = grid(4, 128);
        let (a, b) = (random_measure(g, &mut r), random_measure(g, &mut r));
        let t = l_optimal_map(&a, &b).unwrap();
        assert!(t.is_monotone());
        let (d, n) = (wl_distance(&a, &b).unwrap(), t.displacement_norm(&a));
        assert!((d - n).abs() <= 1e-6 * d, "{d} vs {n}");
    }
}

#[test]
fn geodesic_has_constant_speed() {
    let mut r = rng(12);
    let ts = [0.0, 0.25, 0.5, 0.75, 1.0];
    for _ in 0..5 {
        let g = grid(4, 256);
        let (a, b) = (random_measure(g, &mut r), random_measure(g, &mut r));
        let d = wl_distance(&a, &b).unwrap();
        let path: Vec<GridMeasure> = ts.iter().map(|&t| geodesic(&a, &b, t).unwrap()).collect();
        assert!(path[0].total_variation(&a).unwrap() < 1e-8);
        for i in 0..ts.len() {
            for j in i + 1..ts.len() {
                let dij = wl_distance(&path[i], &path[j]).unwrap();
                let want = (ts[j] - ts[i]) * d;
                assert!((dij - want).abs() <= 0.02 * want, "{i} {j}: {dij} vs {want}");
            }
        }
    }
}

#[test]
fn translating_curve_has_its_speed() {
    let g = grid(2, 256);
    let c = 0.8;
    let times: Vec<f64> = (0..11).map(|k| k as f64 * 0.1).collect();
    let states = times
        .iter()
        .map(|&t| GridMeasure::from_fn(g, |_, th| (-(th - c * t).powi(2) / 0.5).exp()).unwrap())
        .collect();
    let curve = MeasureCurve::new(times, states).unwrap();
    for k in 0..curve.len() {
        let md = metric_derivative(&curve, k).unwrap();
        assert_eq!(md.one_sided, k == 0 || k == curve.len() - 1);
        assert!((md.value - c).abs() < 0.05 * c, "{k}: {}", md.value);
    }
}
