use std::f64::consts::PI;
use std::sync::OnceLock;

use pushedfront::potential::Potential;
use pushedfront::quadrature::{gauss_panels, linspace};
use pushedfront::semigroup::{
    escape_bound_exponent, escape_mass, escape_mass_with, green_function, KernelEvaluator,
};
use pushedfront::spectral::{panel_breaks, SpectralData, SpectralOptions};

fn step20() -> &'static SpectralData {
    static SD: OnceLock<SpectralData> = OnceLock::new();
    SD.get_or_init(|| {
        SpectralData::build(&Potential::step(10.0).unwrap(), 20.0, &SpectralOptions::default()).unwrap()
    })
}

fn space_integral<F: Fn(f64) -> f64>(sd: &SpectralData, f: F, kinks: &[f64]) -> f64 {
    let mut breaks = panel_breaks(&sd.potential, 0.0, sd.l, 0.02);
    breaks.extend_from_slice(kinks);
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();
    gauss_panels(f, &breaks, 10)
}

/// Dirichlet heat kernel of `(1/2) d_xx` on `[0, L]` by the method of images.
fn image_kernel(t: f64, x: f64, y: f64, l: f64) -> f64 {
    let phi = |z: f64| (-z * z / (2.0 * t)).exp() / (2.0 * PI * t).sqrt();
    (-50..=50)
        .map(|n| {
            let s = 2.0 * n as f64 * l;
            phi(y - x + s) - phi(y + x + s)
        })
        .sum()
}

#[test]
fn free_kernel_matches_images() {
    let sd = SpectralData::build(&Potential::zero(), 5.0, &SpectralOptions::default()).unwrap();
    let ke = KernelEvaluator::new(&sd);
    assert!((ke.mu - 1.0).abs() < 1e-15);
    for &(t, x, y) in &[(1.0, 2.5, 2.5), (0.1, 1.0, 1.3), (3.0, 0.5, 4.0)] {
        let g = ke.g(t, x, y).unwrap();
        let want = image_kernel(t, x, y, 5.0);
        assert!((g - want).abs() < 1e-10, "t={t}: {g} vs {want}");
        // drift mu = 1 with r = 1/2: the exponential factors cancel in time
        let p = ke.heat_kernel(t, x, y).unwrap();
        assert!((p - (x - y as f64).exp() * want).abs() < 1e-10 * (1.0 + p));
    }
    assert!(ke.g(0.01, 1.0, 1.0).is_err());
}

#[test]
fn kernel_symmetry_and_chapman_kolmogorov() {
    let sd = step20();
    let ke = KernelEvaluator::new(sd);
    for &(x, y) in &[(0.5, 3.0), (2.0, 7.5), (1.0, 1.0)] {
        let a = ke.g(1.3, x, y).unwrap();
        let b = ke.g(1.3, y, x).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
    }
    let (x, y) = (2.0, 3.0);
    let lhs = space_integral(
        sd,
        |z| ke.heat_kernel(2.0, x, z).unwrap() * ke.heat_kernel(2.0, z, y).unwrap(),
        &[],
    );
    let rhs = ke.heat_kernel(4.0, x, y).unwrap();
    assert!((lhs / rhs - 1.0).abs() < 1e-5, "{lhs} vs {rhs}");
}

#[test]
fn spine_kernel_is_markov_with_stationary_pi() {
    let sd = step20();
    let ke = KernelEvaluator::new(sd);
    for &(t, x) in &[(0.2, 0.7), (1.0, 2.0), (5.0, 6.0)] {
        let mass = space_integral(sd, |y| ke.spine_kernel(t, x, y).unwrap(), &[x]);
        assert!((mass - 1.0).abs() < 1e-5, "t={t}: {mass}");
    }
    for &y in &[0.4, 1.5] {
        let t = 0.5;
        let s = space_integral(sd, |x| ke.pi(x) * ke.spine_kernel(t, x, y).unwrap(), &[y]);
        assert!((s / ke.pi(y) - 1.0).abs() < 1e-5, "y={y}");
    }
    let pim = space_integral(sd, |y| ke.pi(y), &[]);
    assert!((pim - 1.0).abs() < 1e-10);
}

#[test]
fn spine_kernel_relaxes_at_spectral_gap_rate() {
    let sd = SpectralData::build(&Potential::step(10.0).unwrap(), 5.0, &SpectralOptions::default()).unwrap();
    let ke = KernelEvaluator::new(&sd);
    let gap = sd.lambda(1) - sd.lambda(2);
    let dev = |t: f64| {
        linspace(0.2, 4.8, 30)
            .iter()
            .map(|&y| (ke.spine_kernel(t, 1.5, y).unwrap() / ke.pi(y) - 1.0).abs())
            .fold(0.0, f64::max)
    };
    let (d1, d2) = (dev(4.0), dev(8.0));
    let rate = (d1 / d2).ln() / 4.0;
    assert!(d2 < d1);
    assert!((rate / gap - 1.0).abs() < 0.05, "rate {rate} gap {gap}");
}

#[test]
fn green_function_is_laplace_transform() {
    let sd = step20();
    let ke = KernelEvaluator::new(sd);
    for &xi in &[0.1, 1.0] {
        let g = green_function(sd, xi).unwrap();
        for &(x, y) in &[(2.0, 4.0), (4.0, 2.0), (0.5, 2.5)] {
            // short times contribute below e^{-20} for these separations
            let mut breaks = vec![0.05, 0.1, 0.2, 0.5, 1.0, 2.0];
            let t_max = 40.0 / xi;
            let mut t = 2.0;
            while t < t_max {
                t = (t * 1.5).min(t_max);
                breaks.push(t);
            }
            let lt = gauss_panels(|t| (-xi * t).exp() * ke.heat_kernel(t, x, y).unwrap(), &breaks, 12);
            let want = g.eval(x, y);
            assert!((lt / want - 1.0).abs() < 1e-4, "xi={xi} ({x},{y}): {lt} vs {want}");
        }
    }
}

#[test]
fn h_weighted_green_identity() {
    let sd = step20();
    let w = sd.lambda_inf - sd.lambda1();
    for &xi in &[0.05, 0.5, 2.0] {
        let g = green_function(sd, xi).unwrap();
        for &x in &[0.5, 2.0, 5.0] {
            let s = space_integral(sd, |y| sd.h(0.0, y) * g.eval(x, y), &[x]) / sd.h(0.0, x);
            let want = 1.0 / (xi + w);
            assert!((s / want - 1.0).abs() < 1e-6, "xi={xi} x={x}: {s} vs {want}");
        }
    }
}

#[test]
fn wronskian_small_xi_law() {
    let sd = SpectralData::build(&Potential::step(10.0).unwrap(), 4.0, &SpectralOptions::default()).unwrap();
    let w = sd.lambda_inf - sd.lambda1();
    assert!(w > 1e-9);
    let xi = 1e-7;
    let g = green_function(&sd, xi).unwrap();
    let want = 2.0 * (xi + w) * sd.norm2_v1();
    assert!((g.omega / want - 1.0).abs() < 1e-3, "{} vs {want}", g.omega);
}

#[test]
fn green_rejects_bad_xi() {
    assert!(green_function(step20(), 0.0).is_err());
}

#[test]
fn mass_matches_quadrature() {
    let sd = step20();
    let ke = KernelEvaluator::new(sd);
    let m = ke.mass(1.0, 2.0).unwrap();
    let q = space_integral(sd, |y| ke.heat_kernel(1.0, 2.0, y).unwrap(), &[2.0]);
    assert!((m / q - 1.0).abs() < 1e-8);
}

#[test]
fn escape_mass_basic_properties() {
    let opts = SpectralOptions::default();
    let pot = Potential::step(10.0).unwrap();
    let sd = SpectralData::build(&pot, 3.0, &opts).unwrap();
    let mu = sd.mu;
    let small = escape_mass_with(&sd, mu, 0.05, 0.5).unwrap();
    let mid = escape_mass_with(&sd, mu, 1.0, 0.5).unwrap();
    let big = escape_mass_with(&sd, mu, 10.0, 0.5).unwrap();
    assert!(small >= -1e-9 && small < 1e-6, "{small}");
    assert!(mid > small && big > mid);
    assert_eq!(escape_mass_with(&sd, mu, 0.0, 0.5).unwrap(), 0.0);
    assert!(escape_mass(&pot, mu, 0.8, 1.0, 0.5, &opts).is_err());
    // W = 0, mu = 0: E[e^{tau/2}; exit at L] = sin(x)/sin(L) for L < pi
    let free = SpectralData::build(&Potential::zero(), 2.0, &opts).unwrap();
    let e = escape_mass_with(&free, 0.0, 50.0, 1.0).unwrap();
    let want = 1f64.sin() / 2f64.sin();
    assert!((e / want - 1.0).abs() < 1e-6, "{e} vs {want}");
}

#[test]
fn escape_bound_exponent_formula() {
    let (mu, beta) = (2.371538337520559, 2.1503939374751266);
    let gamma = (mu - beta) / (2.0 * beta);
    let e = escape_bound_exponent(mu, beta, gamma);
    assert!((e - (mu - beta) / (2.0 * beta)).abs() < 1e-12);
}
