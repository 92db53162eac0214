use std::sync::OnceLock;

use pushedfront::bbm_sim::{run_replicas, SimConfig};
use pushedfront::kspine::{many_to_few_estimate, spine_replicas, spine_weight, SpineSampler};
use pushedfront::potential::Potential;
use pushedfront::quadrature::gauss_panels;
use pushedfront::rng::stream;
use pushedfront::semigroup::KernelEvaluator;
use pushedfront::spectral::{SpectralData, SpectralOptions};
use pushedfront::stats::{chi_square, histogram, ks_one_sample, ks_two_sample, mean_se, z_score};

fn step5() -> &'static SpectralData {
    static SD: OnceLock<SpectralData> = OnceLock::new();
    SD.get_or_init(|| {
        SpectralData::build(&Potential::step(10.0).unwrap(), 5.0, &SpectralOptions::default()).unwrap()
    })
}

fn kernel_chi2(sd: &SpectralData, draws: &[f64], x0: f64, s: f64) -> f64 {
    let kernel_sd;
    let ke = if s < sd.opts.t_min {
        let opts = SpectralOptions {
            t_min: s / 2.0,
            ..sd.opts.clone()
        };
        kernel_sd = SpectralData::build(&sd.potential, sd.l, &opts).unwrap();
        KernelEvaluator::new(&kernel_sd)
    } else {
        KernelEvaluator::new(sd)
    };
    let edges: Vec<f64> = (0..=50).map(|i| sd.l * i as f64 / 50.0).collect();
    let obs = histogram(draws, &edges);
    let exp: Vec<f64> = edges
        .windows(2)
        .map(|w| {
            let mut br = vec![w[0], 0.5 * (w[0] + w[1]), w[1]];
            if w[0] < 1.0 && w[1] > 1.0 {
                br = vec![w[0], 1.0, w[1]];
            }
            draws.len() as f64 * gauss_panels(|y| ke.spine_kernel(s, x0, y).unwrap(), &br, 10)
        })
        .collect();
    chi_square(&obs, &exp, 5.0).p_value
}

#[test]
fn single_spine_matches_kernel() {
    let sd = step5();
    let sampler = SpineSampler::new(sd);
    let mut rng = stream(1, 1);
    for &(x0, s) in &[(1.5, 0.5), (0.7, 2.0)] {
        let d: Vec<f64> = (0..100_000).map(|_| sampler.step(x0, s, &mut rng).unwrap()).collect();
        let p = kernel_chi2(sd, &d, x0, s);
        assert!(p > 0.01, "x0={x0} s={s}: p = {p}");
    }
}

#[test]
fn short_segments_use_euler_and_match_kernel() {
    let sd = step5();
    let sampler = SpineSampler::new(sd);
    let mut rng = stream(2, 1);
    let (x0, s) = (1.5, 0.03);
    let d: Vec<f64> = (0..40_000).map(|_| sampler.step(x0, s, &mut rng).unwrap()).collect();
    let p = kernel_chi2(sd, &d, x0, s);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn tree_shape_laws() {
    let sd = step5();
    let sampler = SpineSampler::new(sd);
    let t = 2.0;
    let rows = spine_replicas(&sampler, 3, t, 1.5, 1.0, 20_000, 3, |_| 0.0).unwrap();
    let tau: Vec<f64> = rows.iter().map(|r| r.0.depth_of_first_branch().unwrap()).collect();
    let ks = ks_one_sample(&tau, |s| (s / t).powi(2));
    assert!(ks.p_value > 0.01, "{ks:?}");
    let a: Vec<f64> = rows.iter().map(|r| r.0.u_labelled(0, 1)).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.0.u_labelled(1, 2)).collect();
    let ks2 = ks_two_sample(&a, &b);
    assert!(ks2.p_value > 0.01, "{ks2:?}");
    for (tree, _) in &rows {
        assert_eq!(tree.branches.len(), 2);
        // planar ultrametric identity
        assert_eq!(tree.u_planar(0, 2), tree.u_planar(0, 1).max(tree.u_planar(1, 2)));
        // the first branch point is the deepest and both subtrees start from it
        let first = tree.branches[0];
        assert!(tree.branches[1].time >= first.time);
    }
}

#[test]
fn one_spine_is_many_to_one() {
    let sd = step5();
    let sampler = SpineSampler::new(sd);
    let ke = KernelEvaluator::new(sd);
    let (t, x0) = (2.0, 1.5);
    let one = |_: f64| 1.0;
    let (est, _) = many_to_few_estimate(&sampler, 1, t, x0, &|_, _, _| 1.0, &[&one], 50_000, 1.0, 5).unwrap();
    let mass = ke.mass(t, x0).unwrap();
    assert!((est.value - mass).abs() < 3.0 * est.se, "{} +- {} vs {mass}", est.value, est.se);
    let band = |y: f64| if (1.0..=2.0).contains(&y) { 1.0 } else { 0.0 };
    let (e2, _) = many_to_few_estimate(&sampler, 1, t, x0, &|_, _, _| 1.0, &[&band], 50_000, 1.0, 6).unwrap();
    let want = gauss_panels(|y| ke.heat_kernel(t, x0, y).unwrap(), &[1.0, 1.5, 2.0], 10);
    assert!((e2.value - want).abs() < 3.0 * e2.se, "{} +- {} vs {want}", e2.value, e2.se);
}

#[test]
fn two_spine_matches_direct_simulation() {
    let sd = step5();
    let sampler = SpineSampler::new(sd);
    let (t, x0) = (2.0, 1.5);
    let one = |_: f64| 1.0;
    let (est, _) =
        many_to_few_estimate(&sampler, 2, t, x0, &|_, _, _| 1.0, &[&one, &one], 50_000, 1.0, 7).unwrap();
    let cfg = SimConfig {
        potential: sd.potential.clone(),
        mu: sd.mu,
        horizon: t,
        cutoff: Some(sd.l),
        x0,
        dt: Default::default(),
        seed: 77,
        max_particles: 1_000_000,
        gamma_levels: vec![],
        no_branching: false,
        snapshots: vec![],
    };
    let zz = run_replicas(&cfg, 50_000, |_, f| {
        let z = f.population() as f64;
        z * (z - 1.0)
    })
    .unwrap();
    let m = mean_se(&zz);
    let z = z_score(est.value, est.se, m.mean, m.se);
    assert!(z < 3.0, "spine {} +- {} vs direct {} +- {}", est.value, est.se, m.mean, m.se);
}

#[test]
fn constant_rate_weight_factorises() {
    let sd = SpectralData::build(&Potential::zero(), 5.0, &SpectralOptions::default()).unwrap();
    let sampler = SpineSampler::new(&sd);
    let mut rng = stream(9, 9);
    for _ in 0..50 {
        let tree = sampler.sample(4, 1.0, 2.5, 1.0, &mut rng).unwrap();
        let mut w = 1.0;
        for b in &tree.branches {
            w *= sd.h(b.time, b.mark);
        }
        for &z in &tree.leaves {
            w /= sd.h(1.0, z);
        }
        let ratio = spine_weight(&tree, &sd) / w;
        assert!((ratio - 0.125).abs() < 1e-12);
    }
}

#[test]
fn rejects_bad_input() {
    let sd = step5();
    let sampler = SpineSampler::new(sd);
    let mut rng = stream(1, 2);
    assert!(sampler.sample(0, 1.0, 1.0, 1.0, &mut rng).is_err());
    assert!(sampler.sample(2, 1.0, 6.0, 1.0, &mut rng).is_err());
    let one = |_: f64| 1.0;
    assert!(many_to_few_estimate(&sampler, 1, 1.0, 1.0, &|_, _, _| 1.0, &[&one], 10, 1.0, 1).is_err());
}
