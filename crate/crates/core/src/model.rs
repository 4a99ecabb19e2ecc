//! Model parameters: the confinement polynomial `Psi`, the interaction kernel
//! `J` on the torus, and the growth/convexity constants they imply.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ThetaGrid;

/// Polynomial with coefficients in ascending powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        if self.coeffs.len() == 1 {
            return Polynomial::new(vec![0.0]);
        }
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c)
                .collect(),
        )
    }
}

/// Symmetric interaction kernel `J : T -> R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Constant { value: f64 },
    /// `J(x) = amplitude * cos(2 pi x)`.
    Cosine { amplitude: f64 },
    /// Samples `J(k / n)`, `k = 0..n`, linearly interpolated on the torus.
    Tabulated { samples: Vec<f64> },
}

impl Kernel {
    pub fn zero() -> Self {
        Kernel::Constant { value: 0.0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Kernel::Constant { value } => *value,
            Kernel::Cosine { amplitude } => amplitude * (2.0 * std::f64::consts::PI * x).cos(),
            Kernel::Tabulated { samples } => {
                let n = samples.len();
                let s = x.rem_euclid(1.0) * n as f64;
                let k = (s.floor() as usize).min(n - 1);
                let f = s - k as f64;
                samples[k] * (1.0 - f) + samples[(k + 1) % n] * f
            }
        }
    }

    /// `J(d / n)` for `d = 0..n`, the circulant table used on an `n`-site torus.
    pub fn table(&self, n: usize) -> Vec<f64> {
        (0..n).map(|d| self.eval(d as f64 / n as f64)).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            Kernel::Constant { value } => value.abs(),
            Kernel::Cosine { amplitude } => amplitude.abs(),
            Kernel::Tabulated { samples } => samples.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sup_norm() == 0.0
    }

    /// `J(x) = J(-x)` on the samples of an `n`-site torus.
    pub fn is_symmetric(&self, n: usize) -> bool {
        let t = self.table(n);
        (0..n).all(|d| (t[d] - t[(n - d) % n]).abs() <= 1e-12 * (1.0 + t[d].abs()))
    }

    fn validate(&self) -> Result<()> {
        if let Kernel::Tabulated { samples } = self {
            if samples.is_empty() {
                return Err(Error::InvalidParameter("tabulated kernel needs samples".into()));
            }
            if !self.is_symmetric(samples.len()) {
                return Err(Error::Assumption("tabulated kernel is not symmetric".into()));
            }
        }
        Ok(())
    }
}

/// Growth and convexity constants of the model.
///
/// `Psi(theta) >= c_psi theta^{2 l} + c1_psi theta^2 - c2_psi`, `c1_psi > ||J||`,
/// `Psi'' >= lambda_hat`, `lambda_bar = -||J||`, `lambda = lambda_bar + lambda_hat`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    pub ell: u32,
    pub c_psi: f64,
    pub c1_psi: f64,
    pub c2_psi: f64,
    pub lambda_bar: f64,
    pub lambda_hat: f64,
}

impl ModelConstants {
    pub fn lambda(&self) -> f64 {
        self.lambda_bar + self.lambda_hat
    }
}

/// Number of sample points for the sampled assumption checks.
pub const ASSUMPTION_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    psi: Polynomial,
    dpsi: Polynomial,
    d2psi: Polynomial,
    kernel: Kernel,
    constants: ModelConstants,
}

impl ModelParams {
    /// Builds the model and derives its constants on the truncated domain.
    ///
    /// With leading coefficient `a` of `theta^{2l}` we take `c_psi = a / 2` and
    /// `c1_psi = ||J|| + 1/2`; `c2_psi` is then the sampled maximum of
    /// `c_psi theta^{2l} + c1_psi theta^2 - Psi`, refined locally. For `l = 1`
    /// the quadratic coefficient itself must exceed `||J||`.
    pub fn new(psi: Polynomial, kernel: Kernel, domain: &ThetaGrid) -> Result<Self> {
        kernel.validate()?;
        let deg = psi.degree();
        let lead = psi.coeffs()[deg];
        if deg < 2 || deg % 2 != 0 || lead <= 0.0 {
            return Err(Error::Assumption(format!(
                "Psi must have even degree >= 2 and positive leading coefficient (degree {deg}, leading {lead})"
            )));
        }
        let ell = (deg / 2) as u32;
        let jn = kernel.sup_norm();
        let (c_psi, c1_psi) = if ell == 1 {
            if lead <= jn {
                return Err(Error::Assumption(format!(
                    "quadratic Psi needs coefficient {lead} > ||J|| = {jn}"
                )));
            }
            (0.0, 0.5 * (lead + jn))
        } else {
            (0.5 * lead, jn + 0.5)
        };
        let lower = |t: f64| c_psi * t.powi(2 * ell as i32) + c1_psi * t * t;
        let gap = |t: f64| lower(t) - psi.eval(t);
        let c2_psi = sampled_max(domain, gap).max(0.0);
        let d2psi = psi.derivative().derivative();
        let lambda_hat = -sampled_max(domain, |t| -d2psi.eval(t));
        let constants = ModelConstants {
            ell,
            c_psi,
            c1_psi,
            c2_psi,
            lambda_bar: -jn,
            lambda_hat,
        };
        Self::with_constants(psi, kernel, constants, domain)
    }

    /// Uses user-asserted constants after checking them on the domain.
    pub fn with_constants(
        psi: Polynomial,
        kernel: Kernel,
        constants: ModelConstants,
        domain: &ThetaGrid,
    ) -> Result<Self> {
        kernel.validate()?;
        let dpsi = psi.derivative();
        let d2psi = dpsi.derivative();
        let p = Self {
            psi,
            dpsi,
            d2psi,
            kernel,
            constants,
        };
        p.check_assumptions(domain)?;
        Ok(p)
    }

    /// Samples the growth bound, the convexity modulus and `c1_psi > ||J||`.
    pub fn check_assumptions(&self, domain: &ThetaGrid) -> Result<()> {
        let c = &self.constants;
        let jn = self.kernel.sup_norm();
        if !(c.c1_psi > jn) {
            return Err(Error::Assumption(format!(
                "C'_Psi = {} must exceed ||J|| = {jn}",
                c.c1_psi
            )));
        }
        if c.c_psi < 0.0 || c.c2_psi < 0.0 {
            return Err(Error::Assumption("C_Psi and C''_Psi must be >= 0".into()));
        }
        if (c.lambda_bar + jn).abs() > 1e-15 {
            return Err(Error::Assumption("lambda_bar must equal -||J||".into()));
        }
        for t in sample_points(domain) {
            let bound = c.c_psi * t.powi(2 * c.ell as i32) + c.c1_psi * t * t - c.c2_psi;
            if self.psi(t) < bound - 1e-9 * (1.0 + bound.abs()) {
                return Err(Error::Assumption(format!(
                    "growth bound fails at theta = {t}: Psi = {} < {bound}",
                    self.psi(t)
                )));
            }
            if self.d2psi(t) < c.lambda_hat - 1e-9 {
                return Err(Error::Assumption(format!(
                    "Psi''({t}) = {} below lambda_hat = {}",
                    self.d2psi(t),
                    c.lambda_hat
                )));
            }
        }
        Ok(())
    }

    pub fn psi_poly(&self) -> &Polynomial {
        &self.psi
    }

    pub fn psi(&self, t: f64) -> f64 {
        self.psi.eval(t)
    }

    pub fn dpsi(&self, t: f64) -> f64 {
        self.dpsi.eval(t)
    }

    pub fn d2psi(&self, t: f64) -> f64 {
        self.d2psi.eval(t)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn constants(&self) -> &ModelConstants {
        &self.constants
    }

    /// `lambda = lambda_bar + lambda_hat`.
    pub fn lambda(&self) -> f64 {
        self.constants.lambda()
    }

    /// Negative part `lambda^- = max(-lambda, 0)`.
    pub fn lambda_minus(&self) -> f64 {
        (-self.lambda()).max(0.0)
    }

    /// Same confinement, different kernel.
    pub fn with_kernel(&self, kernel: Kernel, domain: &ThetaGrid) -> Result<Self> {
        Self::new(self.psi.clone(), kernel, domain)
    }
}

/// Double well `theta^4/4 - theta^2/2` with `J = 0.5 cos(2 pi x)`.
pub fn default_model(domain: &ThetaGrid) -> ModelParams {
    ModelParams::new(
        Polynomial::new(vec![0.0, 0.0, -0.5, 0.0, 0.25]),
        Kernel::Cosine { amplitude: 0.5 },
        domain,
    )
    .expect("default model satisfies its assumptions")
}

fn sample_points(domain: &ThetaGrid) -> impl Iterator<Item = f64> {
    let (a, b) = (domain.min(), domain.max());
    let n = ASSUMPTION_SAMPLES;
    (0..n).map(move |k| a + (b - a) * k as f64 / (n - 1) as f64)
}

/// Sampled maximum of `f` on the domain, polished by golden-section search
/// around the best sample.
fn sampled_max(domain: &ThetaGrid, f: impl Fn(f64) -> f64) -> f64 {
    let (a, b) = (domain.min(), domain.max());
    let step = (b - a) / (ASSUMPTION_SAMPLES - 1) as f64;
    let (t_best, mut best) = sample_points(domain)
        .map(|t| (t, f(t)))
        .fold((a, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc });
    let (mut lo, mut hi) = ((t_best - step).max(a), (t_best + step).min(b));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let (m1, m2) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if f(m1) > f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    best = best.max(f(0.5 * (lo + hi)));
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn domain() -> ThetaGrid {
        ThetaGrid::new(-6.0, 6.0, 256).unwrap()
    }

    #[test]
    fn polynomial_calculus() {
        let p = Polynomial::new(vec![1.0, 0.0, -0.5, 0.0, 0.25]);
        assert_eq!(p.eval(2.0), 1.0 - 2.0 + 4.0);
        assert_eq!(p.derivative().coeffs(), &[0.0, -1.0, 0.0, 1.0]);
        assert_eq!(p.derivative().derivative().eval(0.0), -1.0);
    }

    #[test]
    fn default_model_constants() {
        let p = default_model(&domain());
        let c = p.constants();
        assert_eq!(c.ell, 2);
        assert_eq!(c.lambda_bar, -0.5);
        assert!((c.lambda_hat + 1.0).abs() < 1e-12);
        assert!((p.lambda() + 1.5).abs() < 1e-12);
        assert!(c.c1_psi > 0.5);
        // c2 = max of theta^4/8 + theta^2 - Psi = -theta^4/8 + 3 theta^2/2, i.e. 9/2 at theta^2 = 6
        assert!((c.c2_psi - 4.5).abs() < 1e-9, "{}", c.c2_psi);
    }

    #[test]
    fn quadratic_psi_needs_dominant_coefficient() {
        let k = Kernel::Cosine { amplitude: 0.6 };
        assert!(ModelParams::new(Polynomial::new(vec![0.0, 0.0, 0.5]), k.clone(), &domain()).is_err());
        assert!(ModelParams::new(Polynomial::new(vec![0.0, 0.0, 1.0]), k, &domain()).is_ok());
    }

    #[test]
    fn asserted_constants_are_checked() {
        let p = default_model(&domain());
        let mut c = *p.constants();
        c.c2_psi = 1.0;
        assert!(ModelParams::with_constants(p.psi_poly().clone(), p.kernel().clone(), c, &domain()).is_err());
    }

    #[test]
    fn kernels() {
        let t = Kernel::Tabulated {
            samples: vec![1.0, 0.5, 0.0, 0.5],
        };
        assert!(t.is_symmetric(4));
        assert_eq!(t.eval(0.125), 0.75);
        assert_eq!(t.eval(-0.25), 0.5);
        let asym = Kernel::Tabulated {
            samples: vec![1.0, 0.5, 0.0, 0.2],
        };
        assert!(ModelParams::new(Polynomial::new(vec![0.0, 0.0, 1.0]), asym, &domain()).is_err());
        let c = Kernel::Cosine { amplitude: 0.5 };
        assert!((c.eval(0.5) + 0.5).abs() < 1e-15);
        assert!(c.is_symmetric(64));
    }
}
