mod common;

use common::*;
use lmf_core::functionals::{
    free_energy, free_energy_parts, gibbs_fiber, hamiltonian, hamiltonian_gradient, lower_bound_constant,
    lower_bound_integrand, metric_slope, micro_free_energy, micro_slope, relative_entropy, relative_entropy_to,
    tilted_gibbs, ProductMeasure,
};
use lmf_core::particles::{recovery_sequence, ParticleState};
use lmf_core::{GridMeasure, Kernel, ThetaGrid};
use rand::Rng;

#[test]
fn lower_bound_holds_on_random_measures() {
    let mut r = rng(21);
    let p = model(128);
    let c = lower_bound_constant(&grid(1, 128).theta, &p);
    for _ in 0..100 {
        let mu = random_measure(grid(4, 128), &mut r);
        let f = free_energy(&mu, &p);
        assert!(f >= lower_bound_integrand(&mu, &p) - c, "{f}");
    }
}

#[test]
fn parts_add_up_exactly() {
    let mut r = rng(22);
    let p = model(64);
    for _ in 0..20 {
        let mu = random_measure(grid(8, 64), &mut r);
        let parts = free_energy_parts(&mu, &p);
        assert_eq!(parts.total, parts.entropy + parts.potential + parts.interaction);
        assert_eq!(free_energy(&mu, &p), parts.total);
    }
}

#[test]
fn relative_entropy_is_nonnegative() {
    let mut r = rng(23);
    for _ in 0..50 {
        let g = grid(4, 96);
        let (a, b) = (random_measure(g, &mut r), random_measure(g, &mut r));
        assert!(relative_entropy_to(&a, &b).unwrap() >= -1e-12);
    }
}

#[test]
fn product_of_one_fiber_tensorizes() {
    let th = ThetaGrid::new(THETA_MIN, THETA_MAX, 128).unwrap();
    let p = model(128).with_kernel(Kernel::zero(), &th).unwrap();
    let f = random_measure(grid(1, 128), &mut rng(24)).fiber(0).unwrap();
    let gibbs_raw: Vec<f64> = th.centers().iter().map(|&t| (-p.psi(t)).exp()).collect();
    let mu1 = GridMeasure::constant_in_x(1, &f).unwrap();
    let h = relative_entropy(&mu1, &gibbs_raw);
    for n in [1, 3, 10, 40] {
        let v = micro_free_energy(&ProductMeasure::iid(&f, n).unwrap(), &p);
        assert!((v - h).abs() < 1e-10, "N = {n}: {v} vs {h}");
    }
    // the grid Gibbs slope floor is O(dtheta^2); 128 cells sit above 1e-3
    let fine = ThetaGrid::new(THETA_MIN, THETA_MAX, 256).unwrap();
    let p = model(256).with_kernel(Kernel::zero(), &fine).unwrap();
    let eq = ProductMeasure::iid(&gibbs_fiber(fine, &p).unwrap(), 5).unwrap();
    assert!(micro_slope(&eq, &p) < 1e-3);
}

#[test]
fn hamiltonian_gradient_matches_differences_on_random_states() {
    let mut r = rng(25);
    let th = ThetaGrid::new(THETA_MIN, THETA_MAX, 64).unwrap();
    let kernels = [Kernel::Cosine { amplitude: 0.5 }, Kernel::Constant { value: -0.3 }];
    for kernel in kernels {
        let p = model(64).with_kernel(kernel, &th).unwrap();
        for n in [1, 2, 7, 16] {
            let thetas: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let s = ParticleState::new(thetas.clone()).unwrap();
            let g = hamiltonian_gradient(&s, &p);
            for i in 0..n {
                let h = 1e-5;
                let mut up = thetas.clone();
                let mut dn = thetas.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (hamiltonian(&ParticleState::new(up).unwrap(), &p)
                    - hamiltonian(&ParticleState::new(dn).unwrap(), &p))
                    / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "{fd} vs {}", g[i]);
            }
        }
    }
}

#[test]
fn recovery_sequence_approaches_the_macroscopic_values() {
    let p = model(128);
    let mu = tilted_gibbs(grid(128, 128), &p, 1.5, 1.0).unwrap();
    let f = free_energy(&mu, &p);
    let s = metric_slope(&mu, &p).powi(2);
    let mut last = (f64::INFINITY, f64::INFINITY);
    for n in [16, 32, 64, 128] {
        let nu = recovery_sequence(&mu, n).unwrap();
        let gap = micro_free_energy(&nu, &p) - f;
        let sgap = (micro_slope(&nu, &p) - s).abs();
        assert!(gap <= 0.0, "N = {n}: {gap}");
        assert!(gap.abs() < last.0 && sgap < last.1, "N = {n}");
        last = (gap.abs(), sgap);
    }
}
