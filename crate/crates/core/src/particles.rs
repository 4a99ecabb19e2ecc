//! Euler-Maruyama simulation of the spin system, empirical measures and the
//! recovery-sequence construction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::ProductMeasure;
use crate::grid::{Grid, ThetaGrid};
use crate::io::{fmt17, CsvTable};
use crate::measure::{DiscreteFiber, FiberMeasure, GridMeasure};
use crate::model::{Kernel, ModelParams};
use crate::rng::{ParticleStream, Purpose};

/// Spins `theta^k`, particle `k` sitting at `k / N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    thetas: Vec<f64>,
}

impl ParticleState {
    pub fn new(thetas: Vec<f64>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::InvalidParameter("no particles".into()));
        }
        if let Some(k) = thetas.iter().position(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter(format!("spin {k} is not finite")));
        }
        Ok(Self { thetas })
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn n(&self) -> usize {
        self.thetas.len()
    }
}

/// Sampled path of the particle system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<ParticleState>,
    pub seed: u64,
}

impl ParticleTrajectory {
    pub fn last(&self) -> &ParticleState {
        &self.states[self.states.len() - 1]
    }

    /// CSV `t,k,theta`.
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&["t", "k", "theta"]);
        for (time, s) in self.times.iter().zip(&self.states) {
            for (k, th) in s.thetas().iter().enumerate() {
                t.push(vec![fmt17(*time), k.to_string(), fmt17(*th)]);
            }
        }
        t.render()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Multiplies the Brownian increment; `1` is the physical system.
    pub noise_scale: f64,
    /// Blow-up threshold on `|theta|`.
    pub blow_up: f64,
    /// Record every this many steps (the final time is always recorded).
    pub record_stride: usize,
}

impl SimOptions {
    /// Physical noise, blow-up at ten times the spin-domain bound.
    pub fn new(theta: &ThetaGrid) -> Self {
        Self {
            noise_scale: 1.0,
            blow_up: 10.0 * theta.min().abs().max(theta.max().abs()),
            record_stride: 1,
        }
    }
}

/// `(1/N) sum_j J((i - j)/N) theta_j` for every `i`.
///
/// Constant and cosine kernels factor through a few global sums; other
/// kernels use the direct circulant sum.
pub fn interaction_field(kernel: &Kernel, table: &[f64], thetas: &[f64]) -> Vec<f64> {
    let n = thetas.len();
    let nf = n as f64;
    match kernel {
        Kernel::Constant { value } => {
            let s = value * thetas.iter().sum::<f64>() / nf;
            vec![s; n]
        }
        Kernel::Cosine { amplitude } => {
            use std::f64::consts::PI;
            let (mut c, mut s) = (0.0, 0.0);
            let angle = |k: usize| 2.0 * PI * k as f64 / nf;
            for (k, t) in thetas.iter().enumerate() {
                c += t * angle(k).cos();
                s += t * angle(k).sin();
            }
            (0..n)
                .map(|i| amplitude * (angle(i).cos() * c + angle(i).sin() * s) / nf)
                .collect()
        }
        Kernel::Tabulated { .. } => crate::functionals::convolve(table, thetas),
    }
}

/// Euler-Maruyama for `d theta^i = (-Psi'(theta^i) + (1/N) sum_j J((i-j)/N) theta^j) dt + sqrt(2) dB^i`.
pub fn simulate(
    theta0: &ParticleState,
    p: &ModelParams,
    dt: f64,
    horizon: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<ParticleTrajectory> {
    if !(dt > 0.0) || !(horizon >= 0.0) || opts.record_stride == 0 {
        return Err(Error::InvalidParameter("dt > 0, horizon >= 0 and record_stride > 0 required".into()));
    }
    let n = theta0.n();
    let steps = ((horizon / dt) - 1e-9).ceil().max(0.0) as usize;
    let dt = if steps > 0 { horizon / steps as f64 } else { dt };
    let table = p.kernel().table(n);
    let amp = opts.noise_scale * (2.0 * dt).sqrt();
    let mut streams: Vec<ParticleStream> = (0..n)
        .map(|k| ParticleStream::new(seed, Purpose::Dynamics, k as u64))
        .collect();
    let mut th = theta0.thetas().to_vec();
    let mut times = vec![0.0];
    let mut states = vec![theta0.clone()];
    for step in 0..steps {
        let field = interaction_field(p.kernel(), &table, &th);
        th.par_iter_mut()
            .zip(streams.par_iter_mut())
            .zip(field.par_iter())
            .for_each(|((t, s), f)| {
                let z = s.normal();
                *t += (-p.dpsi(*t) + f) * dt + amp * z;
            });
        if let Some(k) = th.iter().position(|t| !(t.abs() <= opts.blow_up)) {
            return Err(Error::BlowUp {
                particle: k,
                step: step + 1,
                value: th[k],
            });
        }
        if (step + 1) % opts.record_stride == 0 || step + 1 == steps {
            times.push((step + 1) as f64 * dt);
            states.push(ParticleState { thetas: th.clone() });
        }
    }
    Ok(ParticleTrajectory { times, states, seed })
}

/// Inverse-CDF sample from a cell-wise constant fiber, `u` in `(0, 1)`.
fn sample_fiber(f: &FiberMeasure, u: f64) -> f64 {
    let th = f.theta();
    let h = th.dtheta();
    let total: f64 = f.weights().iter().sum::<f64>() * h;
    let target = u * total;
    let mut acc = 0.0;
    for (j, &w) in f.weights().iter().enumerate() {
        let m = w * h;
        if acc + m >= target && m > 0.0 {
            return th.edge(j) + h * ((target - acc) / m).clamp(0.0, 1.0);
        }
        acc += m;
    }
    th.max()
}

/// Independent draws `theta^k ~ nu_k`.
pub fn sample_product(nu: &ProductMeasure, seed: u64) -> Result<ParticleState> {
    let thetas = nu
        .sites()
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let (u, _) = ParticleStream::new(seed, Purpose::Initial, k as u64).uniform_and_normal();
            sample_fiber(f, u)
        })
        .collect();
    ParticleState::new(thetas)
}

/// Draws `theta^k` from `kappa(k/N, theta) exp(-Psi(theta))` sampled on `theta`.
pub fn sample_initial(
    p: &ModelParams,
    kappa: impl Fn(f64, f64) -> f64,
    theta: &ThetaGrid,
    n: usize,
    seed: u64,
) -> Result<ParticleState> {
    let h = theta.dtheta();
    let sites = (0..n)
        .map(|k| {
            let x = k as f64 / n as f64;
            let w: Vec<f64> = theta.centers().iter().map(|&t| kappa(x, t) * (-p.psi(t)).exp()).collect();
            let mass: f64 = w.iter().sum::<f64>() * h;
            if !((mass - 1.0).abs() <= 1e-6) {
                return Err(Error::NotNormalized { index: k, mass });
            }
            FiberMeasure::from_unnormalized(*theta, w)
        })
        .collect::<Result<_>>()?;
    sample_product(&ProductMeasure::new(sites)?, seed)
}

/// `K^N(Theta) = (1/N) sum_k delta_(k/N, theta^k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPairMeasure {
    /// `(x_k, theta^k)`, each of mass `1/N`.
    pub atoms: Vec<(f64, f64)>,
}

impl EmpiricalPairMeasure {
    pub fn mass(&self) -> f64 {
        1.0 / self.atoms.len() as f64
    }
}

/// `L^N(Theta) = sum_k Leb_{A_k} x delta_{theta^k}`, `A_k = [k/N, (k+1)/N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberedEmpiricalMeasure {
    pub fibers: Vec<DiscreteFiber>,
}

impl FiberedEmpiricalMeasure {
    pub fn interval(&self, k: usize) -> (f64, f64) {
        let n = self.fibers.len() as f64;
        (k as f64 / n, (k + 1) as f64 / n)
    }
}

pub fn kmap(state: &ParticleState) -> EmpiricalPairMeasure {
    let n = state.n() as f64;
    EmpiricalPairMeasure {
        atoms: state
            .thetas()
            .iter()
            .enumerate()
            .map(|(k, &t)| (k as f64 / n, t))
            .collect(),
    }
}

pub fn lmap(state: &ParticleState) -> FiberedEmpiricalMeasure {
    FiberedEmpiricalMeasure {
        fibers: state.thetas().iter().map(|&t| DiscreteFiber::dirac(t)).collect(),
    }
}

/// `int_0^L d_T(0, s)^2 ds` for `0 < L <= 1`.
fn torus_square_integral(l: f64) -> f64 {
    if l <= 0.5 {
        l.powi(3) / 3.0
    } else {
        1.0 / 24.0 + (0.125 - (1.0 - l).powi(3)) / 3.0
    }
}

/// Cost of coupling `L^N` to `K^N` by collapsing each `A_k x {theta^k}` onto
/// `(k/N, theta^k)`; an upper bound for `W_2(K^N, L^N)` on `T x R`.
pub fn k_vs_l_distance(state: &ParticleState) -> f64 {
    let l = lmap(state);
    let k = kmap(state);
    l.fibers
        .iter()
        .zip(&k.atoms)
        .enumerate()
        .map(|(i, (f, &(x, th)))| {
            let (a, b) = l.interval(i);
            debug_assert_eq!(a, x);
            // the spin coordinate is carried over unchanged
            let dtheta = f.atoms()[0].0 - th;
            torus_square_integral(b - a) + (b - a) * dtheta * dtheta
        })
        .sum::<f64>()
        .sqrt()
}

/// `nu^N = prod_k N mu(A_k x d theta)`: site `k` gets the average of the
/// fibers of `mu` over `A_k`.
pub fn recovery_sequence(mu: &GridMeasure, n: usize) -> Result<ProductMeasure> {
    let nx = mu.grid().n_x();
    if n == 0 || nx % n != 0 {
        return Err(Error::InvalidParameter(format!(
            "n_x = {nx} is not a multiple of N = {n}"
        )));
    }
    let r = nx / n;
    let theta = mu.grid().theta;
    let sites = (0..n)
        .map(|k| {
            let mut w = vec![0.0; theta.len()];
            for i in k * r..(k + 1) * r {
                for (a, b) in w.iter_mut().zip(mu.row(i)) {
                    *a += b / r as f64;
                }
            }
            // averages of normalized fibers are normalized; no rescaling
            FiberMeasure::new(theta, w)
        })
        .collect::<Result<_>>()?;
    ProductMeasure::new(sites)
}

/// `mu` with each block of `n_x / N` fibers replaced by the block average.
pub fn coarsen(mu: &GridMeasure, n: usize) -> Result<GridMeasure> {
    let nu = recovery_sequence(mu, n)?;
    let r = mu.grid().n_x() / n;
    let rho: Vec<f64> = nu
        .sites()
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.weights(), r).flatten().copied())
        .collect();
    GridMeasure::new(*mu.grid(), rho)
}

/// Per-site spin histograms of one or more particle states, pooled and
/// fiber-normalized. Particle `k` of `N` falls in grid site `floor(k n_x / N)`.
pub fn empirical_to_grid(samples: &[ParticleState], grid: &Grid) -> Result<GridMeasure> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no samples".into()));
    }
    let (nx, nt) = (grid.n_x(), grid.n_theta());
    let mut counts = vec![0.0; grid.cells()];
    for s in samples {
        let n = s.n();
        for (k, &t) in s.thetas().iter().enumerate() {
            let i = k * nx / n;
            counts[grid.index(i, grid.theta.cell_of(t))] += 1.0;
        }
    }
    for i in 0..nx {
        if counts[i * nt..(i + 1) * nt].iter().all(|&c| c == 0.0) {
            return Err(Error::EmptyFiber { index: i });
        }
    }
    GridMeasure::normalize_fibers(*grid, counts)
}

/// Pools the spins of sites `k` with `floor(k bins / N) = b` into one
/// discrete fiber per bin.
pub fn pooled_bins(samples: &[ParticleState], bins: usize) -> Result<Vec<DiscreteFiber>> {
    let mut pools = vec![Vec::new(); bins];
    for s in samples {
        let n = s.n();
        if n % bins != 0 {
            return Err(Error::InvalidParameter(format!("{bins} bins do not divide N = {n}")));
        }
        for (k, &t) in s.thetas().iter().enumerate() {
            pools[k * bins / n].push(t);
        }
    }
    pools.iter().map(|p| DiscreteFiber::empirical(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_model, Polynomial};
    use crate::transport::{wl_distance, w2_fiber};

    fn ou() -> ModelParams {
        ModelParams::new(
            Polynomial::new(vec![0.0, 0.0, 0.5]),
            Kernel::zero(),
            &ThetaGrid::new(-8.0, 8.0, 16).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn deterministic_ou_decay() {
        let th = ThetaGrid::new(-8.0, 8.0, 16).unwrap();
        let mut o = SimOptions::new(&th);
        o.noise_scale = 0.0;
        let dt = 1e-3;
        let tr = simulate(&ParticleState::new(vec![1.0]).unwrap(), &ou(), dt, 1.0, 0, &o).unwrap();
        let v = tr.last().thetas()[0];
        assert!((v - (1.0f64 - dt).powi(1000)).abs() < 1e-12);
        assert!((v - (-1.0f64).exp()).abs() < dt);
    }

    #[test]
    fn seeds_reproduce() {
        let th = ThetaGrid::new(-6.0, 6.0, 16).unwrap();
        let p = default_model(&th);
        let s0 = ParticleState::new(vec![0.1; 32]).unwrap();
        let o = SimOptions::new(&th);
        let a = simulate(&s0, &p, 1e-2, 0.5, 11, &o).unwrap();
        let b = simulate(&s0, &p, 1e-2, 0.5, 11, &o).unwrap();
        let c = simulate(&s0, &p, 1e-2, 0.5, 12, &o).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let d = pool.install(|| simulate(&s0, &p, 1e-2, 0.5, 11, &o).unwrap());
        assert_eq!(a, d);
    }

    #[test]
    fn blow_up_is_reported() {
        let th = ThetaGrid::new(-1.0, 1.0, 16).unwrap();
        let mut o = SimOptions::new(&th);
        o.noise_scale = 0.0;
        // one explicit step from 20 with a quartic drift overshoots
        let p = default_model(&th);
        let r = simulate(&ParticleState::new(vec![9.0]).unwrap(), &p, 0.1, 1.0, 0, &o);
        assert!(matches!(r, Err(Error::BlowUp { particle: 0, step: 1, .. })));
    }

    #[test]
    fn fast_paths_match_direct_sum() {
        let th: Vec<f64> = (0..12).map(|k| ((k * 7 % 5) as f64 - 2.0) * 0.3).collect();
        for k in [Kernel::Constant { value: 0.7 }, Kernel::Cosine { amplitude: 0.5 }] {
            let table = k.table(12);
            let fast = interaction_field(&k, &table, &th);
            let direct = crate::functionals::convolve(&table, &th);
            for (a, b) in fast.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn maps_and_coupling() {
        let s = ParticleState::new(vec![0.3, -1.0, 2.0, 0.0]).unwrap();
        let k = kmap(&s);
        assert_eq!(k.atoms.len(), 4);
        assert_eq!(k.mass(), 0.25);
        assert_eq!(k.atoms[2], (0.5, 2.0));
        let l = lmap(&s);
        assert_eq!(l.fibers.len(), 4);
        assert_eq!(l.interval(3), (0.75, 1.0));
        assert_eq!(l.fibers[1].atoms(), &[(-1.0, 1.0)]);
        assert!(k_vs_l_distance(&s) <= 0.25);
        let one = ParticleState::new(vec![5.0]).unwrap();
        assert!((k_vs_l_distance(&one) - (1.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn recovery_sequence_examples() {
        let g = Grid::new(8, -4.0, 4.0, 40).unwrap();
        let mu = GridMeasure::from_fn(g, |x, t| (-(t - 3.0 * x).powi(2)).exp()).unwrap();
        let full = recovery_sequence(&mu, 8).unwrap();
        for i in 0..8 {
            assert_eq!(full.sites()[i].weights(), mu.row(i));
        }
        assert!(recovery_sequence(&mu, 3).is_err());
        let flat = GridMeasure::from_fn(g, |_, t| (-t * t).exp()).unwrap();
        let r = recovery_sequence(&flat, 2).unwrap();
        for s in r.sites() {
            for (a, b) in s.weights().iter().zip(flat.row(0)) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        let d: Vec<f64> = [1, 2, 4, 8].iter().map(|&n| wl_distance(&mu, &coarsen(&mu, n).unwrap()).unwrap()).collect();
        assert!(d.windows(2).all(|w| w[1] < w[0]));
        assert!(d[3] < 1e-12);
    }

    #[test]
    fn histograms() {
        let g = Grid::new(2, -4.0, 4.0, 8).unwrap();
        let s = ParticleState::new(vec![0.5, 0.6, -3.9, 1.5]).unwrap();
        let mu = empirical_to_grid(std::slice::from_ref(&s), &g).unwrap();
        assert!(mu.fiber_mass_error() < 1e-12);
        assert_eq!(mu.get(0, 4), 1.0);
        assert_eq!(mu.get(1, 0), 0.5);
        let g3 = Grid::new(8, -4.0, 4.0, 8).unwrap();
        assert!(matches!(empirical_to_grid(&[s], &g3), Err(Error::EmptyFiber { .. })));
    }

    #[test]
    fn gibbs_sampling() {
        let th = ThetaGrid::new(-6.0, 6.0, 600).unwrap();
        let p = default_model(&th);
        let lz = crate::functionals::log_partition(&th, &p, 1.0);
        let n = 4000;
        let s = sample_initial(&p, |_, _| (-lz).exp(), &th, n, 3).unwrap();
        let mean_dpsi = s.thetas().iter().map(|&t| p.dpsi(t)).sum::<f64>() / n as f64;
        let sd = (s.thetas().iter().map(|&t| p.dpsi(t).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(mean_dpsi.abs() < 4.0 * sd / (n as f64).sqrt());
        assert_eq!(s, sample_initial(&p, |_, _| (-lz).exp(), &th, n, 3).unwrap());
        assert!(sample_initial(&p, |_, _| 1.0, &th, n, 3).is_err());
        // narrow bump
        let bump = |_: f64, t: f64| {
            let w = 0.04;
            if (t - 1.0).abs() < w {
                (p.psi(t)).exp() / (2.0 * w)
            } else {
                0.0
            }
        };
        let s = sample_initial(&p, bump, &th, 100, 1).unwrap();
        assert!(s.thetas().iter().all(|t| (t - 1.0).abs() <= 0.05));
    }

    #[test]
    fn ou_stationary_variance() {
        let th = ThetaGrid::new(-8.0, 8.0, 16).unwrap();
        let n = 2000;
        let s0 = ParticleState::new(vec![0.0; n]).unwrap();
        let tr = simulate(&s0, &ou(), 1e-2, 6.0, 5, &SimOptions::new(&th)).unwrap();
        let v = tr.last().thetas().iter().map(|t| t * t).sum::<f64>() / n as f64;
        // Euler-Maruyama stationary variance is 1 / (1 - dt/2)
        assert!((v - 1.0).abs() < 3.0 * (2.0f64 / n as f64).sqrt() + 0.01, "{v}");
        let f = DiscreteFiber::empirical(tr.last().thetas()).unwrap();
        let g = FiberMeasure::from_fn(ThetaGrid::new(-8.0, 8.0, 800).unwrap(), |t| (-t * t / 2.0).exp()).unwrap();
        assert!(w2_fiber(&f, &g).unwrap() < 0.1);
    }
}
