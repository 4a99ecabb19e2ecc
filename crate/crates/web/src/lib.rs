use lmf_core::analysis::counterexample;
use lmf_core::functionals::{free_energy, metric_slope, tilted_gibbs};
use lmf_core::pde::{pde_step, stability_bound};
use lmf_core::transport::{geodesic, wl_distance};
use lmf_core::{default_model, Grid, GridMeasure, Kernel, ModelParams};
use wasm_bindgen::prelude::*;

const THETA_MIN: f64 = -4.0;
const THETA_MAX: f64 = 4.0;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Fibered and flattened distances between the swapped half-torus measures, as JSON.
#[wasm_bindgen]
pub fn counterexample_json(n_x: usize) -> Result<String, String> {
    let r = counterexample(n_x).map_err(err)?;
    serde_json::to_string(&r).map_err(err)
}

fn gaussian_fibers(grid: Grid, mean: f64, std: f64) -> Result<GridMeasure, String> {
    if !(std > 0.0) {
        return Err("std must be positive".into());
    }
    GridMeasure::from_fn(grid, |_, t| (-(t - mean).powi(2) / (2.0 * std * std)).exp()).map_err(err)
}

/// Displacement interpolation between two Gaussians on one fiber. Returns
/// the densities at `frames + 1` equispaced times, concatenated.
#[wasm_bindgen]
pub fn geodesic_frames(m0: f64, s0: f64, m1: f64, s1: f64, n_theta: usize, frames: usize) -> Result<Vec<f64>, String> {
    let g = Grid::new(1, THETA_MIN, THETA_MAX, n_theta).map_err(err)?;
    let (a, b) = (gaussian_fibers(g, m0, s0)?, gaussian_fibers(g, m1, s1)?);
    let frames = frames.max(1);
    let mut out = Vec::with_capacity((frames + 1) * n_theta);
    for k in 0..=frames {
        let mu = geodesic(&a, &b, k as f64 / frames as f64).map_err(err)?;
        out.extend_from_slice(mu.density());
    }
    Ok(out)
}

/// `W_2` between the two Gaussians of [`geodesic_frames`], on the same grid.
#[wasm_bindgen]
pub fn gaussian_distance(m0: f64, s0: f64, m1: f64, s1: f64, n_theta: usize) -> Result<f64, String> {
    let g = Grid::new(1, THETA_MIN, THETA_MAX, n_theta).map_err(err)?;
    wl_distance(&gaussian_fibers(g, m0, s0)?, &gaussian_fibers(g, m1, s1)?).map_err(err)
}

/// The finite-volume flow of the double-well model, stepped from the page.
#[wasm_bindgen]
pub struct Flow {
    mu: GridMeasure,
    p: ModelParams,
    dt: f64,
    t: f64,
}

#[wasm_bindgen]
impl Flow {
    /// Tilted Gibbs start with coupling `J = coupling cos(2 pi x)`.
    #[wasm_bindgen(constructor)]
    pub fn new(n_x: usize, n_theta: usize, coupling: f64, tilt: f64) -> Result<Flow, String> {
        let g = Grid::new(n_x, THETA_MIN, THETA_MAX, n_theta).map_err(err)?;
        let p = default_model(&g.theta)
            .with_kernel(Kernel::Cosine { amplitude: coupling }, &g.theta)
            .map_err(err)?;
        let mu = tilted_gibbs(g, &p, tilt, 1.0).map_err(err)?;
        let dt = (0.25 * g.dtheta().powi(2)).min(0.5 * stability_bound(&p));
        Ok(Flow { mu, p, dt, t: 0.0 })
    }

    /// Advances `steps` inner steps.
    pub fn advance(&mut self, steps: usize) -> Result<(), String> {
        for _ in 0..steps {
            self.mu = pde_step(&self.mu, &self.p, self.dt).map_err(err)?;
            self.t += self.dt;
        }
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn free_energy(&self) -> f64 {
        free_energy(&self.mu, &self.p)
    }

    pub fn slope(&self) -> f64 {
        metric_slope(&self.mu, &self.p)
    }

    pub fn n_x(&self) -> usize {
        self.mu.grid().n_x()
    }

    pub fn n_theta(&self) -> usize {
        self.mu.grid().n_theta()
    }

    /// Row-major density, `n_x * n_theta` values.
    pub fn density(&self) -> Vec<f64> {
        self.mu.density().to_vec()
    }

    pub fn fiber_means(&self) -> Vec<f64> {
        self.mu.fiber_means()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counterexample_reports_one() {
        let v: serde_json::Value = serde_json::from_str(&counterexample_json(8).unwrap()).unwrap();
        assert_eq!(v["wl"], 1.0);
        assert!(counterexample_json(3).is_err());
    }

    #[test]
    fn geodesic_frames_have_unit_mass() {
        let n = 128;
        let f = geodesic_frames(-1.0, 0.5, 1.5, 0.8, n, 4).unwrap();
        assert_eq!(f.len(), 5 * n);
        let h = 8.0 / n as f64;
        for frame in f.chunks(n) {
            assert!((frame.iter().sum::<f64>() * h - 1.0).abs() < 1e-10);
        }
        let d = gaussian_distance(-1.0, 0.5, 1.5, 0.8, n).unwrap();
        // closed form for Gaussians
        assert!((d - (2.5f64.powi(2) + 0.3f64.powi(2)).sqrt()).abs() < 0.02);
    }

    #[test]
    fn flow_lowers_the_free_energy() {
        let mut f = Flow::new(8, 64, 0.5, 1.5).unwrap();
        let f0 = f.free_energy();
        f.advance(50).unwrap();
        assert!(f.free_energy() < f0);
        assert!(f.time() > 0.0);
        assert_eq!(f.density().len(), f.n_x() * f.n_theta());
        assert!(Flow::new(0, 64, 0.5, 0.0).is_err());
    }
}
