mod common;

use common::*;
use lmf_core::analysis::continuity_residual;
use lmf_core::functionals::{free_energy, slope_field, tilted_gibbs};
use lmf_core::jko::{jko_step, solve_jko, JkoConfig};
use lmf_core::pde::{solve_pde, solve_pde_curve, FluxScheme, PdeConfig};
use lmf_core::transport::{metric_derivative, wl_distance};
use lmf_core::MeasureCurve;
use std::f64::consts::PI;

fn cfg(interval: f64, dtheta: f64, horizon: f64) -> PdeConfig {
    let stride = (interval / (0.25 * dtheta * dtheta)).ceil() as usize;
    PdeConfig {
        dt: Some(interval / stride as f64),
        horizon,
        stride,
        scheme: FluxScheme::ExponentialFitting,
    }
}

#[test]
fn conservation_positivity_and_monotone_energy() {
    let mut r = rng(31);
    let p = model(128);
    for _ in 0..3 {
        let mu = random_measure(grid(8, 128), &mut r);
        let run = solve_pde(&mu, &p, &cfg(0.05, 12.0 / 128.0, 1.0)).unwrap();
        for (k, s) in run.curve.states().iter().enumerate() {
            assert!(s.fiber_mass_error() < 1e-10);
            assert!(s.density().iter().all(|&v| v >= 0.0));
            // the random initial tails reach the walls; the quartic drift clears them
            if k > 0 {
                assert!(s.boundary_mass() < 1e-8, "{}", s.boundary_mass());
            }
        }
        let f: Vec<f64> = run.observables.iter().map(|o| o.free_energy).collect();
        assert!(f.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }
}

#[test]
fn metric_derivative_matches_the_velocity_norm() {
    let p = model(256);
    let mu = tilted_gibbs(grid(8, 256), &p, 1.5, 1.0).unwrap();
    let curve = solve_pde_curve(&mu, &p, &cfg(0.005, 12.0 / 256.0, 0.3)).unwrap().0;
    for k in 1..curve.len() - 1 {
        let md = metric_derivative(&curve, k).unwrap().value;
        let v = slope_field(&curve.states()[k], &p).norm();
        assert!((md - v).abs() <= 0.1 * v, "t = {}: {md} vs {v}", curve.times()[k]);
    }
}

#[test]
fn regularization_estimate() {
    let mut r = rng(32);
    let p = model(128);
    let lambda = p.lambda();
    let mu0 = random_measure(grid(4, 128), &mut r);
    let curve = solve_pde_curve(&mu0, &p, &cfg(0.1, 12.0 / 128.0, 1.0)).unwrap().0;
    for _ in 0..10 {
        let nu = random_measure(grid(4, 128), &mut r);
        let (fnu, d) = (free_energy(&nu, &p), wl_distance(&mu0, &nu).unwrap());
        for t in [0.1, 0.5, 1.0] {
            let rhs = fnu + lambda / (2.0 * ((lambda * t).exp() - 1.0)) * d * d;
            let lhs = free_energy(curve.at(t), &p);
            assert!(lhs <= rhs + 0.05 * rhs.abs(), "t = {t}: {lhs} > {rhs}");
        }
    }
}

fn residuals(curve: &MeasureCurve, p: &lmf_core::ModelParams) -> f64 {
    // ten smooth space-time test functions
    let mut worst: f64 = 0.0;
    for a in 1..=5 {
        for b in 0..2 {
            let (fa, kb) = (a as f64 * 0.4, 2.0 * PI * b as f64);
            let r = continuity_residual(
                curve,
                p,
                |t, x, th| (1.0 + t) * (fa * th).sin() * (kb * x).cos(),
                |_, x, th| (fa * th).sin() * (kb * x).cos(),
                |t, x, th| (1.0 + t) * fa * (fa * th).cos() * (kb * x).cos(),
            );
            worst = worst.max(r.abs());
        }
    }
    worst
}

#[test]
fn continuity_equation_residual_shrinks_under_refinement() {
    let mut last = f64::INFINITY;
    for (n_theta, interval) in [(64, 0.02), (128, 0.01), (256, 0.005)] {
        let p = model(n_theta);
        let mu = tilted_gibbs(grid(16, n_theta), &p, 1.5, 1.0).unwrap();
        let curve = solve_pde_curve(&mu, &p, &cfg(interval, 12.0 / n_theta as f64, 0.5)).unwrap().0;
        let r = residuals(&curve, &p);
        assert!(r < last, "n_theta = {n_theta}: {r} after {last}");
        last = r;
    }
    assert!(last < 1e-3, "{last}");
}

#[test]
fn jko_decreases_objective_and_energy() {
    let mut r = rng(33);
    let p = model(128);
    let mu = random_measure(grid(4, 128), &mut r);
    let run = solve_jko(&mu, &p, &JkoConfig::new(0.05), 0.5).unwrap();
    assert!(run.diagnostics.iter().all(|d| d.decrease >= 0.0));
    let f: Vec<f64> = run.states.iter().map(|s| s.free_energy(&p)).collect();
    assert!(f.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn two_half_steps_versus_one_step() {
    let p = model(128);
    let mu = tilted_gibbs(grid(8, 128), &p, 1.5, 1.0).unwrap();
    let gap = |tau: f64| {
        let (a, _) = jko_step(&mu, &p, &JkoConfig::new(2.0 * tau)).unwrap();
        let (b, _) = jko_step(&mu, &p, &JkoConfig::new(tau)).unwrap();
        let (b, _) = jko_step(&b, &p, &JkoConfig::new(tau)).unwrap();
        wl_distance(&a, &b).unwrap()
    };
    let (g1, g2) = (gap(0.04), gap(0.02));
    let ratio = g1 / g2;
    assert!(ratio > 1.5 && ratio < 5.0, "{g1} {g2}");
}

#[test]
fn step_out_of_range_is_rejected() {
    let p = model(64);
    let mu = tilted_gibbs(grid(2, 64), &p, 0.0, 1.0).unwrap();
    let tau = 1.0 / p.lambda_minus();
    assert!(jko_step(&mu, &p, &JkoConfig::new(tau)).is_err());
}
