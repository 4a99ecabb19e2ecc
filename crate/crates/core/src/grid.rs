//! Rectangular grids on the torus `T = [0, 1)` and on a truncated spin interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equispaced sites `x_i = i / n_x` on the unit torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    n: usize,
}

impl TorusGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGrid("torus grid needs at least one site".into()));
        }
        Ok(Self { n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn site(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    /// Periodic index arithmetic.
    pub fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.n as isize) as usize
    }
}

/// Cell-centred grid on `[theta_min, theta_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    min: f64,
    max: f64,
    n: usize,
}

impl ThetaGrid {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || min >= max {
            return Err(Error::InvalidGrid(format!(
                "spin bounds must satisfy theta_min < theta_max, got [{min}, {max}]"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!(
                "spin grid needs at least 2 cells, got {n}"
            )));
        }
        Ok(Self { min, max, n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn dtheta(&self) -> f64 {
        (self.max - self.min) / self.n as f64
    }

    pub fn center(&self, j: usize) -> f64 {
        self.min + (j as f64 + 0.5) * self.dtheta()
    }

    /// Left edge of cell `j`; `edge(n)` is `theta_max`.
    pub fn edge(&self, j: usize) -> f64 {
        if j == self.n {
            self.max
        } else {
            self.min + j as f64 * self.dtheta()
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.center(j)).collect()
    }

    /// Index of the cell containing `theta`, clamped to the grid.
    pub fn cell_of(&self, theta: f64) -> usize {
        let s = ((theta - self.min) / self.dtheta()).floor();
        if s < 0.0 {
            0
        } else {
            (s as usize).min(self.n - 1)
        }
    }
}

/// Product grid `T x [theta_min, theta_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub torus: TorusGrid,
    pub theta: ThetaGrid,
}

impl Grid {
    pub fn new(n_x: usize, theta_min: f64, theta_max: f64, n_theta: usize) -> Result<Self> {
        Ok(Self {
            torus: TorusGrid::new(n_x)?,
            theta: ThetaGrid::new(theta_min, theta_max, n_theta)?,
        })
    }

    pub fn n_x(&self) -> usize {
        self.torus.len()
    }

    pub fn n_theta(&self) -> usize {
        self.theta.len()
    }

    pub fn cells(&self) -> usize {
        self.n_x() * self.n_theta()
    }

    pub fn dx(&self) -> f64 {
        self.torus.dx()
    }

    pub fn dtheta(&self) -> f64 {
        self.theta.dtheta()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_theta() + j
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(TorusGrid::new(0).is_err());
        assert!(ThetaGrid::new(1.0, 1.0, 10).is_err());
        assert!(ThetaGrid::new(-1.0, 1.0, 1).is_err());
    }

    #[test]
    fn periodic_wrap() {
        let t = TorusGrid::new(8).unwrap();
        assert_eq!(t.wrap(-1), 7);
        assert_eq!(t.wrap(8), 0);
        assert_eq!(t.wrap(17), 1);
    }

    #[test]
    fn cell_geometry() {
        let g = ThetaGrid::new(-6.0, 6.0, 12).unwrap();
        assert_eq!(g.dtheta(), 1.0);
        assert_eq!(g.center(0), -5.5);
        assert_eq!(g.edge(12), 6.0);
        assert_eq!(g.cell_of(-10.0), 0);
        assert_eq!(g.cell_of(0.2), 6);
        assert_eq!(g.cell_of(6.0), 11);
    }
}
