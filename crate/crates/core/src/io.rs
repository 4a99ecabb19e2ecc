//! CSV/JSON persistence for grid measures and curves.
//!
//! A measure is written as `i,j,x,theta,rho` rows (row-major, 17 significant
//! digits) plus a JSON sidecar holding the grid metadata.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::measure::GridMeasure;

pub const MEASURE_HEADER: &str = "i,j,x,theta,rho";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub n_x: usize,
    pub n_theta: usize,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl From<&Grid> for GridMeta {
    fn from(g: &Grid) -> Self {
        Self {
            n_x: g.n_x(),
            n_theta: g.n_theta(),
            theta_min: g.theta.min(),
            theta_max: g.theta.max(),
        }
    }
}

impl GridMeta {
    pub fn to_grid(&self) -> Result<Grid> {
        Grid::new(self.n_x, self.theta_min, self.theta_max, self.n_theta)
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn measure_to_csv(mu: &GridMeasure) -> String {
    let g = mu.grid();
    let mut out = String::with_capacity(g.cells() * 80);
    out.push_str(MEASURE_HEADER);
    out.push('\n');
    for i in 0..g.n_x() {
        let x = g.torus.site(i);
        for j in 0..g.n_theta() {
            let _ = writeln!(
                out,
                "{i},{j},{},{},{}",
                fmt17(x),
                fmt17(g.theta.center(j)),
                fmt17(mu.get(i, j))
            );
        }
    }
    out
}

pub fn measure_from_csv(meta: &GridMeta, csv: &str) -> Result<GridMeasure> {
    let grid = meta.to_grid()?;
    let mut lines = csv.lines();
    match lines.next() {
        Some(h) if h.trim() == MEASURE_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "expected header `{MEASURE_HEADER}`, got {other:?}"
            )))
        }
    }
    let mut rho = vec![f64::NAN; grid.cells()];
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!("line {}: expected 5 fields", n + 2)));
        }
        let parse_idx = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 2)))
        };
        let (i, j) = (parse_idx(fields[0])?, parse_idx(fields[1])?);
        if i >= grid.n_x() || j >= grid.n_theta() {
            return Err(Error::Parse(format!("line {}: cell ({i}, {j}) outside grid", n + 2)));
        }
        rho[grid.index(i, j)] = fields[4]
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", n + 2)))?;
    }
    if rho.iter().any(|v| v.is_nan()) {
        return Err(Error::Parse("missing cells in measure CSV".into()));
    }
    GridMeasure::new(grid, rho)
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_measure(dir: &Path, stem: &str, mu: &GridMeasure) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{stem}.csv")), measure_to_csv(mu))?;
    let meta = GridMeta::from(mu.grid());
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&meta)?,
    )?;
    Ok(())
}

pub fn read_measure(dir: &Path, stem: &str) -> Result<GridMeasure> {
    let meta: GridMeta =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    measure_from_csv(&meta, &fs::read_to_string(dir.join(format!("{stem}.csv")))?)
}

/// Minimal CSV table builder with a fixed header.
#[derive(Debug, Clone)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.render())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let g = Grid::new(3, -2.0, 2.0, 7).unwrap();
        let mu = GridMeasure::from_fn(g, |x, t| 1.0 + x * (t + 2.0).powi(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_measure(dir.path(), "mu", &mu).unwrap();
        let back = read_measure(dir.path(), "mu").unwrap();
        assert_eq!(back, mu);
        let text = std::fs::read_to_string(dir.path().join("mu.csv")).unwrap();
        assert!(text.starts_with("i,j,x,theta,rho\n0,0,"));
    }

    #[test]
    fn rejects_wrong_header() {
        let meta = GridMeta {
            n_x: 1,
            n_theta: 2,
            theta_min: 0.0,
            theta_max: 1.0,
        };
        assert!(measure_from_csv(&meta, "a,b\n").is_err());
    }
}
