#![allow(dead_code)]

use lmf_core::measure::{DiscreteFiber, GridMeasure};
use lmf_core::{default_model, Grid, ModelParams, ThetaGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const THETA_MIN: f64 = -6.0;
pub const THETA_MAX: f64 = 6.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn grid(n_x: usize, n_theta: usize) -> Grid {
    Grid::new(n_x, THETA_MIN, THETA_MAX, n_theta).unwrap()
}

pub fn model(n_theta: usize) -> ModelParams {
    default_model(&ThetaGrid::new(THETA_MIN, THETA_MAX, n_theta).unwrap())
}

/// Each fiber a two-component Gaussian mixture with random parameters.
pub fn random_measure(g: Grid, rng: &mut impl Rng) -> GridMeasure {
    let mut raw = Vec::with_capacity(g.cells());
    let centers = g.theta.centers();
    for _ in 0..g.n_x() {
        let (m1, m2) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let (s1, s2): (f64, f64) = (rng.random_range(0.4..1.2), rng.random_range(0.4..1.2));
        let w: f64 = rng.random_range(0.1..0.9);
        raw.extend(centers.iter().map(|&t| {
            w * (-(t - m1).powi(2) / (2.0 * s1 * s1)).exp() / s1
                + (1.0 - w) * (-(t - m2).powi(2) / (2.0 * s2 * s2)).exp() / s2
        }));
    }
    GridMeasure::normalize_fibers(g, raw).unwrap()
}

/// Between one and `max_atoms` atoms in `[-3, 3]` with random masses.
pub fn random_discrete(max_atoms: usize, rng: &mut impl Rng) -> DiscreteFiber {
    let n = rng.random_range(1..=max_atoms);
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut atoms: Vec<(f64, f64)> = raw.iter().map(|m| (rng.random_range(-3.0..3.0), m / total)).collect();
    // absorb the normalization roundoff in the last atom
    let s: f64 = atoms[..n - 1].iter().map(|a| a.1).sum();
    atoms[n - 1].1 = 1.0 - s;
    DiscreteFiber::new(atoms).unwrap()
}
