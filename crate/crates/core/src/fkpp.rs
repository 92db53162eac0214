//! Survival probability `u(t, x) = P_x(Z_t > 0)` of the killed BBM from
//!
//! ```text
//! u_t = u_xx / 2 - mu u_x + r(x) (u - u^2),   u(t, 0) = u(t, L) = 0,   u(0, .) = 1
//! ```
//!
//! Crank-Nicolson for the transport part (upwinded drift when the cell Peclet
//! number exceeds 2), Heun for the reaction, four backward-Euler half steps
//! at start-up to damp the corner discontinuities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_panels, simpson_samples};
use crate::spectral::{panel_breaks, SpectralData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    #[default]
    Full,
    /// Drop the `r (u - u^2)` term entirely.
    NoReaction,
    /// Drop only the `-r u^2` term.
    Linearized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FkppConfig {
    pub t_end: f64,
    pub dx: f64,
    pub dt: f64,
    pub model: Model,
    /// Drift override; the critical drift of the spectral data otherwise.
    pub mu: Option<f64>,
    /// Positions at which `u` is reported at every record time.
    pub probes: Vec<f64>,
    /// Record `a(t)` and probes every this many steps.
    pub record_every: usize,
    /// Times at which the whole profile is kept.
    pub profile_times: Vec<f64>,
    /// How many times `dt` may be halved after an invariant violation.
    pub max_halvings: usize,
}

impl Default for FkppConfig {
    fn default() -> Self {
        FkppConfig {
            t_end: 1.0,
            dx: 5e-3,
            dt: 5e-3,
            model: Model::Full,
            mu: None,
            probes: Vec::new(),
            record_every: 20,
            profile_times: Vec::new(),
            max_halvings: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub l: f64,
    pub dx: f64,
    /// Time step actually used after any halving.
    pub dt: f64,
    pub halvings: usize,
    pub times: Vec<f64>,
    /// `a(t) = int h~(0, y) u(t, y) dy`
    pub a: Vec<f64>,
    pub probes: Vec<f64>,
    /// `probe_values[i][j]`: `u(times[i], probes[j])`
    pub probe_values: Vec<Vec<f64>>,
    pub grid: Vec<f64>,
    pub profiles: Vec<(f64, Vec<f64>)>,
    pub final_profile: Vec<f64>,
}

impl Trajectory {
    /// Linear interpolation of the final profile.
    pub fn u_final(&self, x: f64) -> f64 {
        interp(&self.grid, &self.final_profile, x)
    }

    /// Least-squares slope of `1/a` over the last quarter of records.
    pub fn inverse_a_slope(&self) -> f64 {
        let n = self.times.len();
        let start = n - n / 4;
        let xs = &self.times[start..];
        let ys: Vec<f64> = self.a[start..].iter().map(|a| 1.0 / a).collect();
        slope(xs, &ys)
    }

    /// Least-squares slope of `ln a` on `[t0, t1]`.
    pub fn log_a_slope(&self, t0: f64, t1: f64) -> f64 {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (t, a) in self.times.iter().zip(&self.a) {
            if *t >= t0 && *t <= t1 {
                xs.push(*t);
                ys.push(a.ln());
            }
        }
        slope(&xs, &ys)
    }
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let i = xs.partition_point(|&v| v <= x);
    let w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    ys[i - 1] * (1.0 - w) + ys[i] * w
}

/// Tridiagonal operator `sub u_{i-1} + diag u_i + sup u_{i+1}` on the
/// interior nodes.
struct Stencil {
    sub: f64,
    diag: f64,
    sup: f64,
}

fn apply(op: &Stencil, theta: f64, u: &[f64], out: &mut [f64]) {
    // out = (I + theta A) u with zero boundary values
    let n = u.len();
    for i in 0..n {
        let left = if i > 0 { u[i - 1] } else { 0.0 };
        let right = if i + 1 < n { u[i + 1] } else { 0.0 };
        out[i] = u[i] + theta * (op.sub * left + op.diag * u[i] + op.sup * right);
    }
}

/// Solves `(I - theta A) x = rhs` in place (Thomas algorithm).
fn solve(op: &Stencil, theta: f64, rhs: &mut [f64], scratch: &mut [f64]) {
    let n = rhs.len();
    let a = -theta * op.sub;
    let b = 1.0 - theta * op.diag;
    let c = -theta * op.sup;
    scratch[0] = c / b;
    rhs[0] /= b;
    for i in 1..n {
        let m = b - a * scratch[i - 1];
        scratch[i] = c / m;
        rhs[i] = (rhs[i] - a * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

// round-off of the stencil is about `dt / dx^2` ulps
const INVARIANT_TOL: f64 = 1e-9;

enum Attempt {
    Done(Trajectory),
    Violated(String),
}

/// Solves the FKPP equation on `[0, sd.l]`.
pub fn solve_fkpp(sd: &SpectralData, cfg: &FkppConfig) -> Result<Trajectory> {
    if !(cfg.dx > 0.0 && cfg.dt > 0.0 && cfg.t_end > 0.0) {
        return Err(Error::Config("fkpp needs positive dx, dt and t_end".into()));
    }
    let mut dt = cfg.dt;
    let mut last = String::new();
    for halvings in 0..=cfg.max_halvings {
        match attempt(sd, cfg, dt, halvings)? {
            Attempt::Done(tr) => return Ok(tr),
            Attempt::Violated(msg) => last = msg,
        }
        dt *= 0.5;
    }
    Err(Error::Numerical(format!(
        "FKPP invariants still violated after {} halvings: {last}",
        cfg.max_halvings
    )))
}

fn attempt(sd: &SpectralData, cfg: &FkppConfig, dt: f64, halvings: usize) -> Result<Attempt> {
    let l = sd.l;
    let cells = (l / cfg.dx).round().max(4.0) as usize;
    let dx = l / cells as f64;
    let grid: Vec<f64> = (0..=cells).map(|i| i as f64 * dx).collect();
    let interior = cells - 1;
    let mu = cfg.mu.unwrap_or(sd.mu);
    let pot = &sd.potential;
    // cell averages, so that jumps of W between nodes are weighted correctly
    let rates: Vec<f64> = grid[1..cells]
        .iter()
        .map(|&x| {
            let breaks = panel_breaks(pot, x - 0.5 * dx, x + 0.5 * dx, dx);
            gauss_panels(|y| pot.rate(y), &breaks, 4) / dx
        })
        .collect();
    let peclet = mu.abs() * dx / 0.5;
    let diff = 0.5 / (dx * dx);
    let op = if peclet > 2.0 {
        Stencil::upwind(mu, dx, diff)
    } else {
        Stencil {
            sub: diff + mu / (2.0 * dx),
            diag: -2.0 * diff,
            sup: diff - mu / (2.0 * dx),
        }
    };
    let h_tilde: Vec<f64> = grid.iter().map(|&y| sd.h_tilde(0.0, y)).collect();
    let monotone = cfg.model != Model::Linearized;
    let reaction = |u: f64, r: f64| -> f64 {
        match cfg.model {
            Model::Full => r * (u - u * u),
            Model::NoReaction => 0.0,
            Model::Linearized => r * u,
        }
    };

    let mut u = vec![1.0; interior];
    let mut full = vec![0.0; cells + 1];
    let mut rhs = vec![0.0; interior];
    let mut pred = vec![0.0; interior];
    let mut scratch = vec![0.0; interior];
    let steps = (cfg.t_end / dt).round() as usize;
    let mut tr = Trajectory {
        l,
        dx,
        dt,
        halvings,
        times: Vec::new(),
        a: Vec::new(),
        probes: cfg.probes.clone(),
        probe_values: Vec::new(),
        grid: grid.clone(),
        profiles: Vec::new(),
        final_profile: Vec::new(),
    };
    let mut profile_times = cfg.profile_times.clone();
    profile_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut next_profile = 0;
    let record = |tr: &mut Trajectory, t: f64, u: &[f64], full: &mut Vec<f64>| {
        full[1..cells].copy_from_slice(u);
        let w: Vec<f64> = full.iter().zip(&h_tilde).map(|(u, h)| u * h).collect();
        tr.times.push(t);
        tr.a.push(simpson_samples(&w, dx));
        tr.probe_values
            .push(tr.probes.iter().map(|&x| interp(&grid, full, x)).collect());
    };
    record(&mut tr, 0.0, &u, &mut full);
    let startup = 4;
    let mut step = 0;
    let mut sub_steps = 0;
    while step < steps {
        let prev = u.clone();
        if sub_steps < startup {
            // backward Euler over dt/2 with explicit reaction
            let h = 0.5 * dt;
            for i in 0..interior {
                rhs[i] = u[i] + h * reaction(u[i], rates[i]);
            }
            solve(&op, h, &mut rhs, &mut scratch);
            u.copy_from_slice(&rhs);
            sub_steps += 1;
            if sub_steps % 2 == 1 {
                if let Some(msg) = check(&prev, &u, monotone) {
                    return Ok(Attempt::Violated(msg));
                }
                continue;
            }
        } else {
            apply(&op, 0.5 * dt, &u, &mut rhs);
            for i in 0..interior {
                rhs[i] += dt * reaction(u[i], rates[i]);
            }
            solve(&op, 0.5 * dt, &mut rhs, &mut scratch);
            pred.copy_from_slice(&rhs);
            apply(&op, 0.5 * dt, &u, &mut rhs);
            for i in 0..interior {
                rhs[i] += 0.5 * dt * (reaction(u[i], rates[i]) + reaction(pred[i], rates[i]));
            }
            solve(&op, 0.5 * dt, &mut rhs, &mut scratch);
            u.copy_from_slice(&rhs);
        }
        if let Some(msg) = check(&prev, &u, monotone) {
            return Ok(Attempt::Violated(msg));
        }
        step += 1;
        let t = step as f64 * dt;
        while next_profile < profile_times.len() && profile_times[next_profile] <= t + 0.5 * dt {
            full[1..cells].copy_from_slice(&u);
            tr.profiles.push((t, full.clone()));
            next_profile += 1;
        }
        if step % cfg.record_every.max(1) == 0 || step == steps {
            record(&mut tr, t, &u, &mut full);
        }
    }
    full[1..cells].copy_from_slice(&u);
    tr.final_profile = full;
    Ok(Attempt::Done(tr))
}

impl Stencil {
    /// Transport `-mu u_x` moves information with velocity `mu`; difference
    /// against it.
    fn upwind(mu: f64, dx: f64, diff: f64) -> Stencil {
        if mu > 0.0 {
            Stencil {
                sub: diff + mu / dx,
                diag: -2.0 * diff - mu / dx,
                sup: diff,
            }
        } else {
            Stencil {
                sub: diff,
                diag: -2.0 * diff + mu / dx,
                sup: diff - mu / dx,
            }
        }
    }
}

fn check(prev: &[f64], u: &[f64], monotone: bool) -> Option<String> {
    for (i, (&p, &v)) in prev.iter().zip(u).enumerate() {
        if !v.is_finite() {
            return Some(format!("non-finite value at node {}", i + 1));
        }
        if monotone {
            if v < -INVARIANT_TOL || v > 1.0 + INVARIANT_TOL {
                return Some(format!("u = {v} outside [0, 1] at node {}", i + 1));
            }
            if v > p + INVARIANT_TOL {
                return Some(format!("u increased from {p} to {v} at node {}", i + 1));
            }
        }
    }
    None
}

#[derive(Debug, Clone, Serialize)]
pub struct KolmogorovCheck {
    pub n: f64,
    pub t: f64,
    pub x: f64,
    pub l: f64,
    /// `N u(tN, x)`
    pub lhs: f64,
    /// `2 h^inf(x) / (Sigma^2 t)`
    pub rhs: f64,
    pub rel_err: f64,
    /// `(x, u(tN, x) / h(0, x))` on a sweep of `[1, L/2]`.
    pub ratio_sweep: Vec<(f64, f64)>,
    /// Largest relative deviation of the sweep from its mean.
    pub ratio_spread: f64,
    pub trajectory: Trajectory,
}

/// Compares `N u(tN, x)` with the limit `2 h^inf(x) / (Sigma^2 t)`.
/// `sd` must be built on `[0, L(N)]`.
pub fn kolmogorov_check(sd: &SpectralData, n: f64, t: f64, x: f64, cfg: &FkppConfig) -> Result<KolmogorovCheck> {
    let sigma2 = sd.sigma2()?;
    let lp = sd.limit()?;
    if cfg.t_end + 1e-12 < t * n {
        return Err(Error::InvalidParameter(format!(
            "PDE horizon {} shorter than tN = {}",
            cfg.t_end,
            t * n
        )));
    }
    if !(x > 0.0 && x < sd.l) {
        return Err(Error::InvalidParameter(format!("x = {x} outside (0, {})", sd.l)));
    }
    let mut c = cfg.clone();
    c.t_end = t * n;
    let tr = solve_fkpp(sd, &c)?;
    let lhs = n * tr.u_final(x);
    let rhs = 2.0 * lp.h(x) / (sigma2 * t);
    let sweep: Vec<(f64, f64)> = (0..=20)
        .map(|i| {
            let y = 1.0 + (0.5 * sd.l - 1.0) * i as f64 / 20.0;
            (y, tr.u_final(y) / sd.h(0.0, y))
        })
        .collect();
    let mean = sweep.iter().map(|p| p.1).sum::<f64>() / sweep.len() as f64;
    let spread = sweep
        .iter()
        .map(|p| (p.1 / mean - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(KolmogorovCheck {
        n,
        t,
        x,
        l: sd.l,
        lhs,
        rhs,
        rel_err: (lhs - rhs).abs() / rhs,
        ratio_sweep: sweep,
        ratio_spread: spread,
        trajectory: tr,
    })
}
