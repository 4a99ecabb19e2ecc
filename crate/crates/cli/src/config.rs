//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use lmf_core::functionals::{gibbs_measure, tilted_gibbs};
use lmf_core::io::read_measure;
use lmf_core::jko::JkoConfig;
use lmf_core::pde::PdeConfig;
use lmf_core::{Grid, GridMeasure, Kernel, ModelConstants, ModelParams, Polynomial, ThetaGrid};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Pde,
    Jko,
    Particles,
    Dissipation,
    Rate,
    HydroLadder,
    Check,
    Counterexample,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Ascending coefficients of `Psi`.
    #[serde(default = "default_psi")]
    pub psi: Vec<f64>,
    #[serde(default = "default_kernel")]
    pub kernel: Kernel,
    /// Asserted growth and convexity constants; derived when absent.
    #[serde(default)]
    pub constants: Option<ModelConstants>,
}

fn default_psi() -> Vec<f64> {
    vec![0.0, 0.0, -0.5, 0.0, 0.25]
}

fn default_kernel() -> Kernel {
    Kernel::Cosine { amplitude: 0.5 }
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            psi: default_psi(),
            kernel: default_kernel(),
            constants: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_x: usize,
    pub n_theta: usize,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_x: 64,
            n_theta: 256,
            theta_min: -6.0,
            theta_max: 6.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Every fiber `exp(-Psi) / Z`.
    Gibbs,
    /// Fibers `exp(-Psi + a cos(2 pi x) theta - b theta^2 / 2)`.
    TiltedGibbs { amplitude: f64, curvature: f64 },
    /// Gaussian fibers with mean `mean + modulation cos(2 pi x)`.
    Gaussian {
        mean: f64,
        std: f64,
        #[serde(default)]
        modulation: f64,
    },
    /// A measure written earlier; `path` names the CSV (sidecar JSON next to it).
    File { path: PathBuf },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::TiltedGibbs {
            amplitude: 1.5,
            curvature: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JkoSpec {
    pub tau: f64,
    pub horizon: f64,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub grad_tol: Option<f64>,
    #[serde(default)]
    pub shrink: Option<f64>,
    #[serde(default)]
    pub m_q: Option<usize>,
}

impl JkoSpec {
    pub fn config(&self) -> JkoConfig {
        let mut c = JkoConfig::new(self.tau);
        if let Some(v) = self.max_iter {
            c.max_iter = v;
        }
        if let Some(v) = self.grad_tol {
            c.grad_tol = v;
        }
        if let Some(v) = self.shrink {
            c.shrink = v;
        }
        if let Some(v) = self.m_q {
            c.m_q = v;
        }
        c
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSpec {
    pub n: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Record every this many steps.
    #[serde(default = "one")]
    pub record_stride: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HydroSpec {
    pub ns: Vec<usize>,
    pub dt: f64,
    pub horizon: f64,
    pub sample_interval: f64,
    #[serde(default = "eight")]
    pub bins: usize,
}

fn eight() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    /// Start of the evaluated curve; the reference is `[initial]`.
    #[serde(default)]
    pub start: Option<InitialSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleSpec {
    #[serde(default = "sixteen")]
    pub n_x: usize,
}

fn sixteen() -> usize {
    16
}

/// Optional thresholds; each one present becomes a declared check.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    /// Upper bound on the slope at the final sample.
    #[serde(default)]
    pub final_slope_max: Option<f64>,
    /// Upper bound on `|J| / int |dF|^2`.
    #[serde(default)]
    pub residual_ratio_max: Option<f64>,
    #[serde(default)]
    pub rate_max: Option<f64>,
    #[serde(default)]
    pub rate_min: Option<f64>,
    /// Require the hydrodynamic `W_2` and free-energy gap to decrease in `N`.
    #[serde(default)]
    pub hydro_monotone: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Experiment selected by `lmf run`.
    #[serde(default)]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub pde: Option<PdeConfig>,
    #[serde(default)]
    pub jko: Option<JkoSpec>,
    #[serde(default)]
    pub particles: Option<ParticleSpec>,
    #[serde(default)]
    pub hydro: Option<HydroSpec>,
    #[serde(default)]
    pub rate: Option<RateSpec>,
    #[serde(default)]
    pub counterexample: Option<CounterexampleSpec>,
    #[serde(default)]
    pub checks: CheckSpec,
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    /// Cross-field checks that do not need the model.
    fn validate(&self) -> Result<(), CliError> {
        let n_x = self.grid.n_x;
        if let Some(h) = &self.hydro {
            if h.ns.is_empty() {
                return Err(invalid("hydro.ns", "needs at least one N"));
            }
            for &n in &h.ns {
                if n == 0 || n_x % n != 0 {
                    return Err(invalid("hydro.ns", format!("N = {n} does not divide grid.n_x = {n_x}")));
                }
                if h.bins == 0 || n % h.bins != 0 {
                    return Err(invalid("hydro.bins", format!("{} bins do not divide N = {n}", h.bins)));
                }
            }
        }
        if let Some(pt) = &self.particles {
            if pt.n == 0 || n_x % pt.n != 0 {
                return Err(invalid("particles.n", format!("N = {} does not divide grid.n_x = {n_x}", pt.n)));
            }
            if !(pt.dt > 0.0) || !(pt.horizon > 0.0) {
                return Err(invalid("particles", "dt and horizon must be positive"));
            }
        }
        if let Some(p) = &self.pde {
            if !(p.horizon > 0.0) || p.stride == 0 || p.dt.is_some_and(|d| !(d > 0.0)) {
                return Err(invalid("pde", "horizon, stride and dt must be positive"));
            }
        }
        if let Some(j) = &self.jko {
            if !(j.horizon > 0.0) {
                return Err(invalid("jko.horizon", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn theta(&self) -> Result<ThetaGrid, CliError> {
        ThetaGrid::new(self.grid.theta_min, self.grid.theta_max, self.grid.n_theta).map_err(|e| invalid("grid", e))
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        Grid::new(self.grid.n_x, self.grid.theta_min, self.grid.theta_max, self.grid.n_theta)
            .map_err(|e| invalid("grid", e))
    }

    pub fn model(&self) -> Result<ModelParams, CliError> {
        let th = self.theta()?;
        let psi = Polynomial::new(self.model.psi.clone());
        let kernel = self.model.kernel.clone();
        match self.model.constants {
            Some(c) => ModelParams::with_constants(psi, kernel, c, &th),
            None => ModelParams::new(psi, kernel, &th),
        }
        .map_err(|e| invalid("model", e))
    }

    pub fn jko_config(&self, p: &ModelParams) -> Result<(JkoConfig, f64), CliError> {
        let spec = self.jko.as_ref().ok_or_else(|| invalid("jko", "section missing"))?;
        let cfg = spec.config();
        cfg.validate(p).map_err(|e| invalid("jko.tau", e))?;
        Ok((cfg, spec.horizon))
    }

    pub fn initial_measure(&self, p: &ModelParams) -> Result<GridMeasure, CliError> {
        build_initial(&self.initial, self.grid()?, p).map_err(|e| invalid("initial", e))
    }
}

pub fn build_initial(spec: &InitialSpec, grid: Grid, p: &ModelParams) -> lmf_core::Result<GridMeasure> {
    match spec {
        InitialSpec::Gibbs => gibbs_measure(grid, p),
        InitialSpec::TiltedGibbs { amplitude, curvature } => tilted_gibbs(grid, p, *amplitude, *curvature),
        InitialSpec::Gaussian { mean, std, modulation } => {
            let (m, s, a) = (*mean, *std, *modulation);
            GridMeasure::from_fn(grid, |x, t| {
                let c = m + a * (2.0 * std::f64::consts::PI * x).cos();
                (-(t - c).powi(2) / (2.0 * s * s)).exp()
            })
        }
        InitialSpec::File { path } => {
            let dir = path.parent().unwrap_or(Path::new("."));
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let mu = read_measure(dir, stem)?;
            if mu.grid() != &grid {
                return Err(lmf_core::Error::InvalidParameter("measure file grid differs from [grid]".into()));
            }
            Ok(mu)
        }
    }
}
