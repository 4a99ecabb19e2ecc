use crate::error::{Error, Result};
use crate::measure::GridMeasure;

/// Time-indexed grid measures on one grid with a uniform sampling step.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureCurve {
    times: Vec<f64>,
    states: Vec<GridMeasure>,
}

impl MeasureCurve {
    pub fn new(times: Vec<f64>, states: Vec<GridMeasure>) -> Result<Self> {
        if times.len() != states.len() || times.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "{} times for {} states",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("times must increase".into()));
        }
        let g = states[0].grid();
        if states.iter().any(|s| s.grid() != g) {
            return Err(Error::GridMismatch("curve states on different grids".into()));
        }
        Ok(Self { times, states })
    }

    /// Constant curve sampled at `n` equispaced times on `[0, horizon]`.
    pub fn constant(mu: GridMeasure, horizon: f64, n: usize) -> Result<Self> {
        let n = n.max(2);
        let times = (0..n).map(|k| horizon * k as f64 / (n - 1) as f64).collect();
        Self::new(times, vec![mu; n])
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[GridMeasure] {
        &self.states
    }

    pub fn first(&self) -> &GridMeasure {
        &self.states[0]
    }

    pub fn last(&self) -> &GridMeasure {
        &self.states[self.states.len() - 1]
    }

    /// Sampling step (assumes uniform spacing).
    pub fn dt(&self) -> f64 {
        if self.len() < 2 {
            0.0
        } else {
            (self.times[self.len() - 1] - self.times[0]) / (self.len() - 1) as f64
        }
    }

    /// The same states traversed backwards on the same time grid.
    pub fn reversed(&self) -> Self {
        let mut states = self.states.clone();
        states.reverse();
        Self {
            times: self.times.clone(),
            states,
        }
    }

    /// State at the sample nearest to `t`.
    pub fn at(&self, t: f64) -> &GridMeasure {
        let k = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(k, _)| k)
            .unwrap_or(0);
        &self.states[k]
    }

    pub fn push(&mut self, t: f64, mu: GridMeasure) -> Result<()> {
        if t <= *self.times.last().unwrap_or(&f64::NEG_INFINITY) {
            return Err(Error::InvalidParameter("times must increase".into()));
        }
        if mu.grid() != self.states[0].grid() {
            return Err(Error::GridMismatch("curve states on different grids".into()));
        }
        self.times.push(t);
        self.states.push(mu);
        Ok(())
    }
}
