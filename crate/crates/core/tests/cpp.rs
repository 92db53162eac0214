use pushedfront::cpp::{cpp_moment, cpp_moment_mc, sample_cpp, sample_h, u_theta_cdf};
use pushedfront::quadrature::gauss_legendre;
use pushedfront::rng::stream;
use pushedfront::stats::{ks_two_sample, mean_se};

fn half_depth_cdf() -> f64 {
    4.0 * std::f64::consts::LN_2 - 2.0
}

#[test]
fn moment_closed_forms_are_exact() {
    let t = 1.7;
    let m = 0.6;
    let one = |_: usize, _: usize, _: f64| 1.0;
    let k1 = cpp_moment(1, t, &one, &[m], 0, 1).unwrap();
    assert!((k1.value - t * m).abs() < 1e-13);
    let k2 = cpp_moment(2, t, &one, &[m, m], 0, 1).unwrap();
    assert!((k2.value - 2.0 * t * t * m * m).abs() < 1e-12);
    // size-biased pair depth is uniform on [0, t]
    let ind = |_: usize, _: usize, d: f64| if d <= t / 2.0 { 1.0 } else { 0.0 };
    let half = cpp_moment(2, t, &ind, &[1.0, 1.0], 0, 1).unwrap();
    assert!((half.value - t * t).abs() < 1e-12, "{}", half.value);
    for k in 3..=6 {
        let v = cpp_moment(k, t, &one, &vec![1.0; k], 20_000, 3).unwrap();
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        assert!((v.value - fact * t.powi(k as i32)).abs() < 1e-9 * v.value);
    }
}

#[test]
fn moment_monte_carlo_agrees_with_quadrature() {
    let t = 2.0;
    let m = 0.8;
    let one = |_: usize, _: usize, _: f64| 1.0;
    let ind = |_: usize, _: usize, d: f64| if d <= t / 2.0 { 1.0 } else { 0.0 };
    for (psi, k) in [
        (&one as &dyn Fn(usize, usize, f64) -> f64, 1usize),
        (&one, 2),
        (&ind, 2),
    ] {
        let f = |i: usize, j: usize, d: f64| psi(i, j, d);
        let q = cpp_moment(k, t, &f, &vec![m; k], 0, 1).unwrap();
        let mc = cpp_moment_mc(k, t, 1e-3 * t, &f, &vec![m; k], 40_000, 11).unwrap();
        assert!(
            (mc.mean - q.value).abs() < 3.0 * mc.se,
            "k={k}: mc {} +- {} vs {}",
            mc.mean,
            mc.se,
            q.value
        );
    }
}

#[test]
fn k3_moment_matches_monte_carlo() {
    let t = 1.0;
    let psi = |i: usize, j: usize, d: f64| if i == 0 && j == 1 { d } else { 1.0 };
    let q = cpp_moment(3, t, &psi, &[1.0; 3], 0, 1).unwrap();
    let mc = cpp_moment_mc(3, t, 1e-3, &psi, &[1.0; 3], 40_000, 5).unwrap();
    assert!((mc.mean - q.value).abs() < 3.0 * mc.se, "{} +- {} vs {}", mc.mean, mc.se, q.value);
}

#[test]
fn theta_density_normalised() {
    // theta = s / (1 - s) maps the density to k s^{k-1} on [0, 1)
    let (x, w) = gauss_legendre(16);
    for k in 1..=8usize {
        let mut s = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            let u = 0.5 * (xi + 1.0);
            let theta = u / (1.0 - u);
            let jac = 1.0 / ((1.0 - u) * (1.0 - u));
            let dens = k as f64 * theta.powi(k as i32 - 1) / (1.0 + theta).powi(k as i32 + 1);
            s += 0.5 * wi * dens * jac;
        }
        assert!((s - 1.0).abs() < 1e-10, "k={k}: {s}");
    }
}

#[test]
fn pair_depth_checkpoint_from_sample_h() {
    let t = 3.0;
    let n = 100_000;
    let mut rng = stream(21, 0);
    let hits: Vec<f64> = (0..n)
        .map(|_| {
            let h = sample_h(2, t, None, &mut rng).unwrap();
            (h.get(0, 1) <= t / 2.0) as u8 as f64
        })
        .collect();
    let ms = mean_se(&hits);
    assert!((ms.mean - half_depth_cdf()).abs() < 3.0 * ms.se, "{} +- {}", ms.mean, ms.se);
}

#[test]
fn pair_depth_checkpoint_from_cpp() {
    let t = 1.0;
    let n = 40_000;
    let mut rng = stream(22, 0);
    let hits: Vec<f64> = (0..n)
        .map(|_| {
            let c = sample_cpp(t, 1e-3, 10_000_000, &mut rng).unwrap();
            let (_, d, _) = c.sample_leaves(2, &mut rng);
            (d[0][1] <= t / 2.0) as u8 as f64
        })
        .collect();
    let ms = mean_se(&hits);
    assert!((ms.mean - half_depth_cdf()).abs() < 3.0 * ms.se, "{} +- {}", ms.mean, ms.se);
}

#[test]
fn total_length_is_exponential() {
    let t = 2.0;
    let n = 100_000;
    let mut rng = stream(23, 0);
    let ys: Vec<f64> = (0..n).map(|_| sample_cpp(t, 0.5, 1000, &mut rng).unwrap().total).collect();
    let m = mean_se(&ys);
    assert!((m.mean - t).abs() < 3.0 * m.se);
    let sq: Vec<f64> = ys.iter().map(|y| y * y).collect();
    let m2 = mean_se(&sq);
    // E[Y^2] = 2 t^2
    assert!((m2.mean - 2.0 * t * t).abs() < 3.0 * m2.se);
}

#[test]
fn constructions_agree_for_k2_and_k3() {
    let t = 1.0;
    for k in [2usize, 3] {
        let n = 20_000;
        let mut r1 = stream(31, k as u64);
        let mut r2 = stream(32, k as u64);
        let a: Vec<f64> = (0..n).map(|_| sample_h(k, t, None, &mut r1).unwrap().get(0, 1)).collect();
        let b: Vec<f64> = (0..n)
            .map(|_| {
                let c = sample_cpp(t, 1e-3, 10_000_000, &mut r2).unwrap();
                c.sample_leaves(k, &mut r2).1[0][1]
            })
            .collect();
        let ks = ks_two_sample(&a, &b);
        assert!(ks.p_value > 0.01, "k={k}: {ks:?}");
    }
}

#[test]
fn resolution_floor_does_not_move_pair_law() {
    let t = 1.0;
    let n = 5_000;
    let draw = |floor: f64, seed: u64| -> Vec<f64> {
        let mut rng = stream(seed, 0);
        (0..n)
            .map(|_| {
                let c = sample_cpp(t, floor, 50_000_000, &mut rng).unwrap();
                c.sample_leaves(2, &mut rng).1[0][1]
            })
            .collect()
    };
    let a = draw(1e-3, 41);
    let b = draw(1e-4, 42);
    let ks = ks_two_sample(&a, &b);
    assert!(ks.p_value > 0.01, "{ks:?}");
}

#[test]
fn large_theta_concentrates_depths_near_zero() {
    // conditional oracle: u = theta/(1+theta) has density k u^{k-1}
    let k = 2;
    let t = 1.0;
    let (x, w) = gauss_legendre(16);
    let u0 = 100.0 / 101.0;
    let cond = |p: f64| {
        let mut num = 0.0;
        let mut den = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            let u = u0 + (1.0 - u0) * 0.5 * (xi + 1.0);
            let theta = u / (1.0 - u);
            let dens = k as f64 * u.powi(k as i32 - 1) * 0.5 * (1.0 - u0) * wi;
            num += dens * u_theta_cdf(theta, p * t, t);
            den += dens;
        }
        num / den
    };
    let low = cond(0.1);
    let high = 1.0 - cond(0.9);
    assert!(low > 0.9 && high < 2e-3, "{low} {high}");

    let mut rng = stream(51, 0);
    let mut below = Vec::new();
    let mut above = Vec::new();
    for _ in 0..1_000_000 {
        let h = sample_h(k, t, None, &mut rng).unwrap();
        if h.theta > 100.0 {
            below.push((h.u[0] <= 0.1 * t) as u8 as f64);
            above.push((h.u[0] > 0.9 * t) as u8 as f64);
        }
    }
    let b = mean_se(&below);
    assert!(b.n > 10_000);
    assert!((b.mean - low).abs() < 3.0 * b.se + 1e-12, "{} vs {low}", b.mean);
    let a = mean_se(&above);
    assert!((a.mean - high).abs() < 3.0 * a.se.max(1e-4), "{} vs {high}", a.mean);
}

#[test]
fn pair_depth_cdf_closed_form() {
    use pushedfront::cpp::pair_depth_cdf;
    use pushedfront::stats::ks_one_sample;
    assert!((pair_depth_cdf(1.5, 3.0) - half_depth_cdf()).abs() < 1e-14);
    assert_eq!(pair_depth_cdf(0.0, 1.0), 0.0);
    assert_eq!(pair_depth_cdf(1.0, 1.0), 1.0);
    // independent oracle: integrate F_theta(p) against the theta density
    let (x, w) = gauss_legendre(40);
    for p in [0.05, 0.3, 0.8, 0.9999] {
        let mut s = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            let u = 0.5 * (xi + 1.0);
            s += 0.5 * wi * 2.0 * u * p / (1.0 - u * (1.0 - p));
        }
        assert!((pair_depth_cdf(p, 1.0) - s).abs() < 1e-10, "p={p}");
    }
    let mut rng = stream(61, 0);
    let d: Vec<f64> = (0..50_000).map(|_| sample_h(2, 2.0, None, &mut rng).unwrap().get(0, 1)).collect();
    let ks = ks_one_sample(&d, |s| pair_depth_cdf(s, 2.0));
    assert!(ks.p_value > 0.01, "{ks:?}");
}
