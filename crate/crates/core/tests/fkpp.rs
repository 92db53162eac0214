use std::f64::consts::PI;

use pushedfront::fkpp::{kolmogorov_check, solve_fkpp, FkppConfig, Model};
use pushedfront::potential::Potential;
use pushedfront::semigroup::KernelEvaluator;
use pushedfront::spectral::{harmonic_data, SpectralData, SpectralOptions};

fn step(l: f64) -> SpectralData {
    SpectralData::build(&Potential::step(10.0).unwrap(), l, &SpectralOptions::default()).unwrap()
}

#[test]
fn heat_survival_series() {
    let l = 5.0;
    let sd = SpectralData::build(&Potential::zero(), l, &SpectralOptions::default()).unwrap();
    let probes = vec![0.3, 1.0, 2.5, 4.2];
    let cfg = FkppConfig {
        t_end: 1.0,
        model: Model::NoReaction,
        mu: Some(0.0),
        probes: probes.clone(),
        ..Default::default()
    };
    let tr = solve_fkpp(&sd, &cfg).unwrap();
    let last = tr.probe_values.last().unwrap();
    for (x, got) in probes.iter().zip(last) {
        let want: f64 = (0..400)
            .map(|j| {
                let k = (2 * j + 1) as f64;
                4.0 / (k * PI) * (k * PI * x / l).sin() * (-k * k * PI * PI / (2.0 * l * l)).exp()
            })
            .sum();
        assert!((got - want).abs() < 1e-4, "x={x}: {got} vs {want}");
    }
}

#[test]
fn linearized_growth_rate() {
    let sd = step(5.0);
    let cfg = FkppConfig {
        t_end: 6.0,
        model: Model::Linearized,
        ..Default::default()
    };
    let tr = solve_fkpp(&sd, &cfg).unwrap();
    let want = sd.lambda1() - sd.lambda_inf;
    let got = tr.log_a_slope(2.0, 6.0);
    assert!((got - want).abs() < 1e-3, "{got} vs {want}");
}

#[test]
fn full_run_invariants() {
    let sd = step(5.0);
    let ke = KernelEvaluator::new(&sd);
    let cfg = FkppConfig {
        t_end: 2.0,
        probes: vec![0.5, 1.5, 3.0, 4.5],
        record_every: 1,
        ..Default::default()
    };
    let tr = solve_fkpp(&sd, &cfg).unwrap();
    assert_eq!(tr.halvings, 0);
    for w in tr.a.windows(2) {
        assert!(w[1] < w[0]);
    }
    for (x, u) in cfg.probes.iter().zip(tr.probe_values.last().unwrap()) {
        let m = ke.mass(2.0, *x).unwrap();
        assert!(*u <= m.min(1.0) + 1e-6, "x={x}: {u} > {m}");
        assert!(*u > 0.0);
    }
}

#[test]
fn late_time_decay_of_a() {
    let pot = Potential::step(10.0).unwrap();
    let (sd, hs) = harmonic_data(&pot, 100.0, &SpectralOptions::default()).unwrap();
    let cfg = FkppConfig {
        t_end: 60.0,
        ..Default::default()
    };
    let tr = solve_fkpp(&sd, &cfg).unwrap();
    let half = hs.sigma2 / 2.0;
    let slope = tr.inverse_a_slope();
    assert!((slope - half).abs() < 0.1 * half, "{slope} vs {half}");
    let n = tr.a.len();
    let (a0, a1) = (tr.a[n - 3], tr.a[n - 1]);
    assert!(a1 < 0.05);
    let dadt = (a1 - a0) / (tr.times[n - 1] - tr.times[n - 3]);
    let a = tr.a[n - 2];
    let ratio = dadt / (a * a);
    assert!((ratio + half).abs() < 0.1 * half, "{ratio} vs {}", -half);
}

#[test]
fn kolmogorov_check_shape() {
    let pot = Potential::step(10.0).unwrap();
    let (sd, _) = harmonic_data(&pot, 100.0, &SpectralOptions::default()).unwrap();
    let cfg = FkppConfig {
        t_end: 50.0,
        ..Default::default()
    };
    assert!(kolmogorov_check(&sd, 100.0, 1.0, 2.0, &cfg).is_err());
    let cfg = FkppConfig {
        t_end: 100.0,
        ..Default::default()
    };
    let k = kolmogorov_check(&sd, 100.0, 1.0, 2.0, &cfg).unwrap();
    assert!(k.ratio_spread < 0.05, "{}", k.ratio_spread);
    assert!(k.rel_err < 0.2, "{} vs {}", k.lhs, k.rhs);

    let zero = SpectralData::build(&Potential::zero(), 10.0, &SpectralOptions::default()).unwrap();
    assert!(kolmogorov_check(&zero, 100.0, 1.0, 2.0, &cfg).is_err());
}
