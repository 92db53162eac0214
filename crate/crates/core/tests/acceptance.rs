//! End-to-end acceptance checks, one PASS/FAIL line per criterion.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use pushedfront::bbm_sim::{run_replicas, SimConfig};
use pushedfront::cpp::{cpp_moment, cpp_moment_mc};
use pushedfront::harness::{run_experiment, Experiment, Gate, Report};
use pushedfront::kspine::{many_to_few_estimate, SpineSampler};
use pushedfront::potential::Potential;
use pushedfront::quadrature::gauss_panels;
use pushedfront::semigroup::{green_function, KernelEvaluator};
use pushedfront::spectral::{
    eigenvalue, limit_top_eigenvalue, panel_breaks, verify_negative_spectrum_example, SpectralData, SpectralOptions,
};
use pushedfront::stats::{mean_se, z_score};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn space_integral<F: Fn(f64) -> f64>(sd: &SpectralData, f: F, kinks: &[f64]) -> f64 {
    let mut b = panel_breaks(&sd.potential, 0.0, sd.l, 0.02);
    b.extend_from_slice(kinks);
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.dedup();
    gauss_panels(f, &b, 10)
}

fn spectral_exactness() -> Outcome {
    let opts = SpectralOptions::default();
    let mut worst = 0.0f64;
    for k in 1..=5 {
        let got = eigenvalue(&Potential::zero(), 10.0, k, &opts).map_err(|e| e.to_string())?.lambda;
        let want = -((k * k) as f64) * PI * PI / 200.0;
        worst = worst.max((got - want).abs());
    }
    check(worst < 1e-8, format!("max |lambda_k - exact| = {worst:.2e}"))
}

fn step_spectrum() -> Outcome {
    let opts = SpectralOptions::default();
    let p = Potential::step(10.0).unwrap();
    let lim = limit_top_eigenvalue(&p, &opts).map_err(|e| e.to_string())?.lambda;
    let g = |l: f64| {
        let a = (10.0 - 2.0 * l).sqrt();
        a * a.cos() / a.sin() + (2.0 * l).sqrt()
    };
    let want = bisect(g, 0.5 * (10.0 - PI * PI) + 1e-12, 0.5 * (10.0 - PI * PI / 4.0) - 1e-12);
    let root_err = (lim - want).abs();
    let ls = [2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0];
    let lams: Vec<f64> = ls.iter().map(|&l| eigenvalue(&p, l, 1, &opts).unwrap().lambda).collect();
    let increasing = lams.windows(2).all(|w| w[1] > w[0]);
    let ys: Vec<f64> = lams.iter().map(|x| (lim - x).ln()).collect();
    let n = ls.len() as f64;
    let (mx, my) = (ls.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let slope = ls.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / ls.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let beta = (2.0 * lim).sqrt();
    let slope_err = (slope / (-2.0 * beta) - 1.0).abs();
    let sd = SpectralData::build(
        &p,
        10.0,
        &SpectralOptions {
            n_terms: Some(40),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let neg = verify_negative_spectrum_example(&sd).map_err(|e| e.to_string())?;
    check(
        root_err < 1e-8 && increasing && slope_err < 0.1 && neg.max_residual <= 1e-6,
        format!(
            "root err {root_err:.1e}, increasing {increasing}, slope {slope:.4} vs {:.4}, residual {:.1e}",
            -2.0 * beta,
            neg.max_residual
        ),
    )
}

fn kernel_identities() -> Outcome {
    let sd = SpectralData::build(&Potential::step(10.0).unwrap(), 20.0, &SpectralOptions::default())
        .map_err(|e| e.to_string())?;
    let ke = KernelEvaluator::new(&sd);
    let e = |r: pushedfront::Result<f64>| r.unwrap();
    let mut worst = 0.0f64;
    for &(x, y) in &[(0.5, 3.0), (2.0, 7.5)] {
        let a = e(ke.g(1.3, x, y));
        worst = worst.max((a - e(ke.g(1.3, y, x))).abs() / a);
    }
    let ck = space_integral(&sd, |z| e(ke.heat_kernel(2.0, 2.0, z)) * e(ke.heat_kernel(2.0, z, 3.0)), &[]);
    worst = worst.max((ck / e(ke.heat_kernel(4.0, 2.0, 3.0)) - 1.0).abs());
    for &(t, x) in &[(0.2, 0.7), (1.0, 2.0), (5.0, 6.0)] {
        worst = worst.max((space_integral(&sd, |y| e(ke.spine_kernel(t, x, y)), &[x]) - 1.0).abs());
    }
    for &y in &[0.4, 1.5] {
        let s = space_integral(&sd, |x| ke.pi(x) * e(ke.spine_kernel(0.5, x, y)), &[y]);
        worst = worst.max((s / ke.pi(y) - 1.0).abs());
    }
    let mut lt_worst = 0.0f64;
    for &xi in &[0.1, 1.0] {
        let g = green_function(&sd, xi).map_err(|e| e.to_string())?;
        for &(x, y) in &[(2.0, 4.0), (0.5, 2.5)] {
            let mut breaks = vec![0.05, 0.1, 0.2, 0.5, 1.0, 2.0];
            let (mut t, t_max) = (2.0, 40.0 / xi);
            while t < t_max {
                t = (t * 1.5).min(t_max);
                breaks.push(t);
            }
            let lt = gauss_panels(|t| (-xi * t).exp() * e(ke.heat_kernel(t, x, y)), &breaks, 12);
            lt_worst = lt_worst.max((lt / g.eval(x, y) - 1.0).abs());
        }
    }
    let mut h_worst = 0.0f64;
    let w = sd.lambda_inf - sd.lambda1();
    for &xi in &[0.05, 0.5, 2.0] {
        let g = green_function(&sd, xi).map_err(|e| e.to_string())?;
        for &x in &[0.5, 2.0, 5.0] {
            let s = space_integral(&sd, |y| sd.h(0.0, y) * g.eval(x, y), &[x]) / sd.h(0.0, x);
            h_worst = h_worst.max((s * (xi + w) - 1.0).abs());
        }
    }
    check(
        worst < 1e-5 && lt_worst < 1e-4 && h_worst < 1e-6,
        format!("kernel {worst:.1e}, Laplace {lt_worst:.1e}, h-identity {h_worst:.1e}"),
    )
}

fn many_to_few() -> Outcome {
    let sd = SpectralData::build(&Potential::step(10.0).unwrap(), 5.0, &SpectralOptions::default())
        .map_err(|e| e.to_string())?;
    let (t, x0) = (2.0, 1.5);
    let cfg = SimConfig {
        potential: sd.potential.clone(),
        mu: sd.mu,
        horizon: t,
        cutoff: Some(sd.l),
        x0,
        dt: Default::default(),
        seed: 4,
        max_particles: 1_000_000,
        gamma_levels: vec![],
        no_branching: false,
        snapshots: vec![],
    };
    let zs = run_replicas(&cfg, 100_000, |_, f| f.population() as f64).map_err(|e| e.to_string())?;
    let z1 = mean_se(&zs);
    let zz: Vec<f64> = zs.iter().map(|z| z * (z - 1.0)).collect();
    let z2 = mean_se(&zz);
    let mass = KernelEvaluator::new(&sd).mass(t, x0).map_err(|e| e.to_string())?;
    let s1 = (z1.mean - mass).abs() / z1.se;
    let sampler = SpineSampler::new(&sd);
    let one = |_: f64| 1.0;
    let (est, _) = many_to_few_estimate(&sampler, 2, t, x0, &|_, _, _| 1.0, &[&one, &one], 100_000, 1.0, 4)
        .map_err(|e| e.to_string())?;
    let s2 = z_score(est.value, est.se, z2.mean, z2.se);
    check(
        s1 < 3.0 && s2 < 3.0,
        format!(
            "E[Z] {:.4} vs {mass:.4} ({s1:.2} SE); E[Z(Z-1)] {:.3} vs spine {:.3} ({s2:.2} SE)",
            z1.mean, z2.mean, est.value
        ),
    )
}

fn gates_outcome(gates: &[Gate]) -> Outcome {
    let text: Vec<String> = gates
        .iter()
        .map(|g| format!("{}={:.4}{}", g.name, g.value, if g.passed { "" } else { "(FAIL)" }))
        .collect();
    check(gates.iter().all(|g| g.passed), text.join(", "))
}

fn kolmogorov(r: &Report) -> Outcome {
    let k = r.kolmogorov.as_ref().ok_or("kolmogorov report missing")?;
    let rows: Vec<String> = k
        .rows
        .iter()
        .map(|row| format!("N={} fkpp={:.4} limit={:.4} err={:.4}", row.n, row.fkpp, row.limit, row.fkpp_rel_err))
        .collect();
    let g = gates_outcome(&k.gates);
    let all = format!("{}; {}", rows.join("; "), g.clone().unwrap_or_else(|e| e));
    check(g.is_ok(), all)
}

fn yaglom(r: &Report) -> Outcome {
    let y = r.yaglom.as_ref().ok_or("yaglom report missing")?;
    let g = gates_outcome(&y.gates);
    let all = format!(
        "survivors {} of {}, mean {:.3} vs {:.3}; {}",
        y.survivors,
        y.replicas,
        y.mean,
        y.limit_mean,
        g.clone().unwrap_or_else(|e| e)
    );
    check(g.is_ok() && r.capped == Some(0), all)
}

fn genealogy(r: &Report) -> Outcome {
    let x = r.genealogy.as_ref().ok_or("genealogy report missing")?;
    gates_outcome(&x.gates)
}

fn cpp_moments() -> Outcome {
    let (t, m) = (1.7, 0.6);
    let one = |_: usize, _: usize, _: f64| 1.0;
    let k1 = cpp_moment(1, t, &one, &[m], 0, 1).map_err(|e| e.to_string())?;
    let k2 = cpp_moment(2, t, &one, &[m, m], 0, 1).map_err(|e| e.to_string())?;
    let e1 = (k1.value - t * m).abs();
    let e2 = (k2.value - 2.0 * t * t * m * m).abs();
    let mc1 = cpp_moment_mc(1, t, 1e-3 * t, &one, &[m], 40_000, 8).map_err(|e| e.to_string())?;
    let mc2 = cpp_moment_mc(2, t, 1e-3 * t, &one, &[m, m], 40_000, 9).map_err(|e| e.to_string())?;
    let z1 = (mc1.mean - t * m).abs() / mc1.se;
    let z2 = (mc2.mean - 2.0 * t * t * m * m).abs() / mc2.se;
    check(
        e1 < 1e-12 && e2 < 1e-12 && z1 < 3.0 && z2 < 3.0,
        format!("quadrature errors {e1:.1e}, {e2:.1e}; MC {z1:.2} SE, {z2:.2} SE"),
    )
}

fn spine_limit(r: &Report) -> Outcome {
    let s = r.spine_limit.as_ref().ok_or("spine report missing")?;
    let g = gates_outcome(&s.gates);
    let all = format!(
        "N={} estimate {:.4} +- {:.4} vs {:.4}; {}",
        s.n,
        s.estimate,
        s.se,
        s.limit,
        g.clone().unwrap_or_else(|e| e)
    );
    check(g.is_ok(), all)
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, start: Instant, out: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        match out {
            Ok(m) => println!("PASS {id} {name} [{secs:.1}s]: {m}"),
            Err(m) => {
                failed += 1;
                println!("FAIL {id} {name} [{secs:.1}s]: {m}");
            }
        }
    };
    let s = Instant::now();
    report(1, "spectral exactness", s, spectral_exactness());
    let s = Instant::now();
    report(2, "step-potential spectrum", s, step_spectrum());
    let s = Instant::now();
    report(3, "kernel identities", s, kernel_identities());
    let s = Instant::now();
    report(4, "many-to-one / many-to-few", s, many_to_few());

    let s = Instant::now();
    let exp = Experiment::default();
    let run = run_experiment(&exp);
    let shared = s.elapsed().as_secs_f64();
    println!("shared experiment (N={}, {} replicas) took {shared:.1}s", exp.n, exp.replicas);
    match &run {
        Ok(r) => {
            let s = Instant::now();
            report(5, "Kolmogorov estimate", s, kolmogorov(r));
            report(6, "Yaglom law", s, yaglom(r));
            report(7, "genealogy limit", s, genealogy(r));
        }
        Err(e) => {
            for (id, name) in [(5, "Kolmogorov estimate"), (6, "Yaglom law"), (7, "genealogy limit")] {
                report(id, name, s, Err(e.to_string()));
            }
        }
    }
    let s = Instant::now();
    report(8, "CPP moments", s, cpp_moments());
    let s = Instant::now();
    match &run {
        Ok(r) => report(9, "k-spine convergence", s, spine_limit(r)),
        Err(e) => report(9, "k-spine convergence", s, Err(e.to_string())),
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
