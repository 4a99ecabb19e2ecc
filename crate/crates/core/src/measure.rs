//! Probability measures on `T x R` with Lebesgue left marginal, stored as
//! cell-centred densities on a [`Grid`], together with their fibers.
//!
//! Every fiber `mu^x` is a probability density on the spin grid. Densities are
//! read as piecewise constant per cell, so all quadratures below are midpoint
//! sums and are exact for that interpretation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ThetaGrid};

/// Normalization tolerance right after construction.
pub const CONSTRUCTION_TOL: f64 = 1e-10;
/// Normalization tolerance after time stepping.
pub const DYNAMICS_TOL: f64 = 1e-8;

/// Density on a spin grid with unit mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberMeasure {
    theta: ThetaGrid,
    weights: Vec<f64>,
}

impl FiberMeasure {
    pub fn new(theta: ThetaGrid, weights: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(theta, weights, CONSTRUCTION_TOL)
    }

    pub(crate) fn with_tolerance(theta: ThetaGrid, weights: Vec<f64>, tol: f64) -> Result<Self> {
        if weights.len() != theta.len() {
            return Err(Error::GridMismatch(format!(
                "fiber has {} weights for {} cells",
                weights.len(),
                theta.len()
            )));
        }
        for (j, &w) in weights.iter().enumerate() {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidDensity { i: 0, j, value: w });
            }
        }
        let mass: f64 = weights.iter().sum::<f64>() * theta.dtheta();
        if (mass - 1.0).abs() > tol {
            return Err(Error::NotNormalized { index: 0, mass });
        }
        Ok(Self { theta, weights })
    }

    /// Normalizes an arbitrary nonnegative profile.
    pub fn from_unnormalized(theta: ThetaGrid, raw: Vec<f64>) -> Result<Self> {
        let mass: f64 = raw.iter().sum::<f64>() * theta.dtheta();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::ZeroMassFiber { index: 0 });
        }
        let weights = raw.into_iter().map(|w| w / mass).collect();
        Self::new(theta, weights)
    }

    pub fn from_fn(theta: ThetaGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let raw = theta.centers().into_iter().map(f).collect();
        Self::from_unnormalized(theta, raw)
    }

    pub fn theta(&self) -> &ThetaGrid {
        &self.theta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Cell masses `w_j * dtheta`.
    pub fn masses(&self) -> Vec<f64> {
        let h = self.theta.dtheta();
        self.weights.iter().map(|w| w * h).collect()
    }

    pub fn mean(&self) -> f64 {
        self.moment(|t| t)
    }

    pub fn second_moment(&self) -> f64 {
        self.moment(|t| t * t)
    }

    pub fn moment(&self, f: impl Fn(f64) -> f64) -> f64 {
        let h = self.theta.dtheta();
        self.weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * f(self.theta.center(j)))
            .sum::<f64>()
            * h
    }
}

/// Finitely many atoms with positive masses summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteFiber {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteFiber {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidParameter("discrete fiber needs atoms".into()));
        }
        for &(loc, mass) in &atoms {
            if !loc.is_finite() || !(mass > 0.0) || !mass.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "atom ({loc}, {mass}) must have finite location and positive mass"
                )));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized { index: 0, mass: total });
        }
        Ok(Self { atoms })
    }

    pub fn dirac(loc: f64) -> Self {
        Self {
            atoms: vec![(loc, 1.0)],
        }
    }

    /// Equal-mass atoms at the given locations.
    pub fn empirical(locations: &[f64]) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::InvalidParameter("empirical fiber needs samples".into()));
        }
        if let Some(t) = locations.iter().find(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter(format!("sample {t} is not finite")));
        }
        // equal masses sum to one by construction; a summed check would
        // reject large samples on roundoff alone
        let m = 1.0 / locations.len() as f64;
        Ok(Self {
            atoms: locations.iter().map(|&t| (t, m)).collect(),
        })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|(t, m)| t * m).sum()
    }
}

/// Fiberwise-normalized density on `T x [theta_min, theta_max]`.
///
/// `rho[i * n_theta + j]` is the density at `(x_i, theta_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    grid: Grid,
    rho: Vec<f64>,
}

impl GridMeasure {
    /// Wraps a density that is already fiber-normalized.
    pub fn new(grid: Grid, rho: Vec<f64>) -> Result<Self> {
        let mu = Self { grid, rho };
        mu.validate(CONSTRUCTION_TOL)?;
        Ok(mu)
    }

    pub(crate) fn with_tolerance(grid: Grid, rho: Vec<f64>, tol: f64) -> Result<Self> {
        let mu = Self { grid, rho };
        mu.validate(tol)?;
        Ok(mu)
    }

    /// Scales each row of a nonnegative grid to unit fiber mass.
    pub fn normalize_fibers(grid: Grid, mut raw: Vec<f64>) -> Result<Self> {
        if raw.len() != grid.cells() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} cells",
                raw.len(),
                grid.cells()
            )));
        }
        let (nx, nt, h) = (grid.n_x(), grid.n_theta(), grid.dtheta());
        for i in 0..nx {
            let row = &mut raw[i * nt..(i + 1) * nt];
            for (j, &v) in row.iter().enumerate() {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::InvalidDensity { i, j, value: v });
                }
            }
            let mass = row.iter().sum::<f64>() * h;
            if !(mass > 0.0) {
                return Err(Error::ZeroMassFiber { index: i });
            }
            row.iter_mut().for_each(|v| *v /= mass);
        }
        Self::new(grid, raw)
    }

    /// Samples `f(x, theta)` at cell centres and normalizes fiberwise.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut raw = Vec::with_capacity(grid.cells());
        for i in 0..grid.n_x() {
            let x = grid.torus.site(i);
            for j in 0..grid.n_theta() {
                raw.push(f(x, grid.theta.center(j)));
            }
        }
        Self::normalize_fibers(grid, raw)
    }

    /// Every fiber equal to `fiber`.
    pub fn constant_in_x(n_x: usize, fiber: &FiberMeasure) -> Result<Self> {
        let t = *fiber.theta();
        let grid = Grid::new(n_x, t.min(), t.max(), t.len())?;
        let rho = (0..n_x).flat_map(|_| fiber.weights().iter().copied()).collect();
        Self::new(grid, rho)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.rho
    }

    pub fn into_density(self) -> Vec<f64> {
        self.rho
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rho[self.grid.index(i, j)]
    }

    /// Row `i` of the density.
    pub fn row(&self, i: usize) -> &[f64] {
        let nt = self.grid.n_theta();
        &self.rho[i * nt..(i + 1) * nt]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rho.chunks(self.grid.n_theta())
    }

    /// The fiber `mu^{x_i}` as an exact copy of row `i`.
    pub fn fiber(&self, i: usize) -> Result<FiberMeasure> {
        if i >= self.grid.n_x() {
            return Err(Error::IndexOutOfRange {
                index: i,
                n_x: self.grid.n_x(),
            });
        }
        Ok(FiberMeasure {
            theta: self.grid.theta,
            weights: self.row(i).to_vec(),
        })
    }

    pub fn set_fiber(&mut self, i: usize, fiber: &FiberMeasure) -> Result<()> {
        if i >= self.grid.n_x() {
            return Err(Error::IndexOutOfRange {
                index: i,
                n_x: self.grid.n_x(),
            });
        }
        if *fiber.theta() != self.grid.theta {
            return Err(Error::GridMismatch("fiber spin grid differs".into()));
        }
        let nt = self.grid.n_theta();
        self.rho[i * nt..(i + 1) * nt].copy_from_slice(fiber.weights());
        Ok(())
    }

    /// Midpoint quadrature of `int g(x, theta) dmu`.
    pub fn integrate(&self, g: impl Fn(f64, f64) -> f64) -> f64 {
        let (dx, h) = (self.grid.dx(), self.grid.dtheta());
        let centers = self.grid.theta.centers();
        self.rows()
            .enumerate()
            .map(|(i, row)| {
                let x = self.grid.torus.site(i);
                row.iter()
                    .zip(&centers)
                    .map(|(r, &t)| r * g(x, t))
                    .sum::<f64>()
            })
            .sum::<f64>()
            * dx
            * h
    }

    pub fn second_moment(&self) -> f64 {
        self.integrate(|_, t| t * t)
    }

    /// First moments `int theta dmu^{x_i}` per site.
    pub fn fiber_means(&self) -> Vec<f64> {
        let h = self.grid.dtheta();
        let centers = self.grid.theta.centers();
        self.rows()
            .map(|row| row.iter().zip(&centers).map(|(r, t)| r * t).sum::<f64>() * h)
            .collect()
    }

    pub fn fiber_masses(&self) -> Vec<f64> {
        let h = self.grid.dtheta();
        self.rows().map(|row| row.iter().sum::<f64>() * h).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.fiber_masses().iter().sum::<f64>() * self.grid.dx()
    }

    /// Largest fiber-mass deviation from one.
    pub fn fiber_mass_error(&self) -> f64 {
        self.fiber_masses()
            .iter()
            .map(|m| (m - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest mass carried by the two outermost spin cells of any fiber.
    pub fn boundary_mass(&self) -> f64 {
        let h = self.grid.dtheta();
        self.rows()
            .map(|row| (row[0] + row[row.len() - 1]) * h)
            .fold(0.0, f64::max)
    }

    /// Total variation distance `(1/2) int |rho - sigma|`.
    pub fn total_variation(&self, other: &GridMeasure) -> Result<f64> {
        self.same_grid(other)?;
        let w = self.grid.dx() * self.grid.dtheta();
        Ok(0.5 * self
            .rho
            .iter()
            .zip(&other.rho)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * w)
    }

    pub fn same_grid(&self, other: &GridMeasure) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    /// Torus relabelling `x_i -> x_{i+s}`.
    pub fn shift_sites(&self, s: isize) -> GridMeasure {
        let nt = self.grid.n_theta();
        let mut rho = vec![0.0; self.rho.len()];
        for i in 0..self.grid.n_x() {
            let k = self.grid.torus.wrap(i as isize + s);
            rho[k * nt..(k + 1) * nt].copy_from_slice(self.row(i));
        }
        GridMeasure {
            grid: self.grid,
            rho,
        }
    }

    /// Checks positivity, per-fiber normalization and total mass.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.rho.len() != self.grid.cells() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} cells",
                self.rho.len(),
                self.grid.cells()
            )));
        }
        let nt = self.grid.n_theta();
        for (k, &v) in self.rho.iter().enumerate() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidDensity {
                    i: k / nt,
                    j: k % nt,
                    value: v,
                });
            }
        }
        for (index, mass) in self.fiber_masses().into_iter().enumerate() {
            if (mass - 1.0).abs() > tol {
                return Err(Error::NotNormalized { index, mass });
            }
        }
        let total = self.total_mass();
        if (total - 1.0).abs() > tol {
            return Err(Error::NotNormalized {
                index: usize::MAX,
                mass: total,
            });
        }
        Ok(())
    }
}
