//! Heat kernel of the killed, drifted BBM and related objects, as series
//! over the Dirichlet eigenpairs.
//!
//! ```text
//! p_t(x, y) = e^{mu (x - y)} e^{(1 - mu^2) t / 2} g_t(x, y)
//! g_t(x, y) = sum_k e^{lambda_k t} v_k(x) v_k(y) / ||v_k||^2
//! q_t(x, y) = sum_k e^{(lambda_k - lambda_1) t} (v_k(x)/v_1(x)) v_1(y) v_k(y) / ||v_k||^2
//! ```

use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::prufer::{step_constant, InnerSolution, PruferState};
use crate::spectral::{SpectralData, SpectralOptions};

pub struct KernelEvaluator<'a> {
    pub sd: &'a SpectralData,
    pub mu: f64,
}

impl<'a> KernelEvaluator<'a> {
    /// Uses the critical drift of the potential.
    pub fn new(sd: &'a SpectralData) -> Self {
        KernelEvaluator { sd, mu: sd.mu }
    }

    pub fn with_mu(sd: &'a SpectralData, mu: f64) -> Self {
        KernelEvaluator { sd, mu }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t < self.sd.opts.t_min {
            return Err(Error::SeriesNotConverged(format!(
                "t = {t} below t_min = {}",
                self.sd.opts.t_min
            )));
        }
        Ok(())
    }

    fn inside(&self, x: f64) -> bool {
        x > 0.0 && x < self.sd.l
    }

    /// Eigenfunction values `u_k(x)` for all retained terms.
    pub fn modes(&self, x: f64) -> Vec<f64> {
        self.sd.eigen.iter().map(|e| e.value(x)).collect()
    }

    fn series(&self, t: f64, shift: f64, ux: &[f64], uy: &[f64]) -> f64 {
        let mut s = 0.0;
        for (k, e) in self.sd.eigen.iter().enumerate() {
            s += ((e.lambda + shift) * t).exp() * ux[k] * uy[k] / e.norm2;
        }
        s
    }

    /// `g_t(x, y)`, symmetric in `x, y`.
    pub fn g(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        self.check_time(t)?;
        if !self.inside(x) || !self.inside(y) {
            return Ok(0.0);
        }
        Ok(self.series(t, 0.0, &self.modes(x), &self.modes(y)))
    }

    /// Density of particles at `y` at time `t` started from one at `x`.
    pub fn heat_kernel(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        self.check_time(t)?;
        if !self.inside(x) || !self.inside(y) {
            return Ok(0.0);
        }
        let shift = 0.5 * (1.0 - self.mu * self.mu);
        Ok((self.mu * (x - y)).exp() * self.series(t, shift, &self.modes(x), &self.modes(y)))
    }

    /// Transition density of the spine.
    pub fn spine_kernel(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        self.check_time(t)?;
        if !self.inside(x) || !self.inside(y) {
            return Ok(0.0);
        }
        let ux = self.modes(x);
        let uy = self.modes(y);
        let l1 = self.sd.lambda1();
        Ok(self.series(t, -l1, &ux, &uy) / ux[0] * uy[0])
    }

    /// Stationary density of the spine.
    pub fn pi(&self, y: f64) -> f64 {
        self.sd.pi(y)
    }

    /// `(p_t, q_t, Pi)` at each `y` for a fixed source `x`.
    pub fn profile(&self, t: f64, x: f64, ys: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
        self.check_time(t)?;
        let ux = self.modes(x);
        let shift = 0.5 * (1.0 - self.mu * self.mu);
        let l1 = self.sd.lambda1();
        let inside_x = self.inside(x);
        Ok(ys
            .iter()
            .map(|&y| {
                if !inside_x || !self.inside(y) {
                    return (0.0, 0.0, 0.0);
                }
                let uy = self.modes(y);
                let p = (self.mu * (x - y)).exp() * self.series(t, shift, &ux, &uy);
                let q = self.series(t, -l1, &ux, &uy) / ux[0] * uy[0];
                (p, q, self.pi(y))
            })
            .collect())
    }

    /// Expected number of particles alive at `t`, `int p_t(x, y) dy`.
    pub fn mass(&self, t: f64, x: f64) -> Result<f64> {
        self.check_time(t)?;
        if !self.inside(x) {
            return Ok(0.0);
        }
        let ux = self.modes(x);
        let shift = 0.5 * (1.0 - self.mu * self.mu);
        let mut s = 0.0;
        for (k, e) in self.sd.eigen.iter().enumerate() {
            s += ((e.lambda + shift) * t).exp() * ux[k] / e.norm2 * self.weighted_integral(k);
        }
        Ok((self.mu * x).exp() * s)
    }

    fn weighted_integral(&self, k: usize) -> f64 {
        let e = &self.sd.eigen[k];
        let mu = self.mu;
        let breaks = crate::spectral::panel_breaks(&self.sd.potential, 0.0, self.sd.l, 0.02);
        crate::quadrature::gauss_panels(|y| (-mu * y).exp() * e.value(y), &breaks, 10)
    }
}

/// Solution of `u'' = (2 lambda - W) u` on `[0, L]` with given data at 0,
/// continued exactly beyond 1 (stable for growing solutions).
#[derive(Debug, Clone)]
struct ForwardSolution {
    inner: InnerSolution,
    lambda: f64,
    scale: f64,
}

impl ForwardSolution {
    fn new(pot: &Potential, lambda: f64, init: PruferState, scale: f64, opts: &SpectralOptions) -> Self {
        ForwardSolution {
            inner: InnerSolution::new(pot, lambda, init, opts.rk_step),
            lambda,
            scale,
        }
    }

    fn state(&self, x: f64) -> PruferState {
        if x <= 1.0 {
            self.inner.state(x)
        } else {
            step_constant(self.inner.end(), 2.0 * self.lambda, x - 1.0)
        }
    }

    fn values(&self, x: f64) -> (f64, f64) {
        let s = self.state(x);
        (self.scale * s.u(), self.scale * s.du())
    }
}

/// Resolvent data at spectral parameter `lambda = lambda_inf + xi`.
#[derive(Debug, Clone)]
pub struct GreenData {
    pub xi: f64,
    pub lambda: f64,
    pub mu: f64,
    pub l: f64,
    /// Wronskian `psi phi' - psi' phi`.
    pub omega: f64,
    phi: ForwardSolution,
    a: InnerSolution,
    b: InnerSolution,
    coef: (f64, f64),
}

impl GreenData {
    /// `phi` with `phi(0) = 0`, `phi'(0) = v_1'(0)`.
    pub fn phi(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        self.phi.values(x.min(self.l)).0
    }

    /// `(psi, psi')` with `psi(L) = 0` and `psi(1) = 1`.
    pub fn psi_values(&self, x: f64) -> (f64, f64) {
        if x >= self.l {
            return (0.0, self.psi_tail(self.l).1);
        }
        if x >= 1.0 {
            return self.psi_tail(x);
        }
        let (ua, dua) = self.a.values(x.max(0.0));
        let (ub, dub) = self.b.values(x.max(0.0));
        (
            self.coef.0 * ua + self.coef.1 * ub,
            self.coef.0 * dua + self.coef.1 * dub,
        )
    }

    pub fn psi(&self, x: f64) -> f64 {
        self.psi_values(x).0
    }

    fn psi_tail(&self, x: f64) -> (f64, f64) {
        tail_values(self.lambda, self.l, x)
    }

    /// `G(x, y) = 2 omega^{-1} e^{mu (x - y)} psi(x v y) phi(x ^ y)`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        if x <= 0.0 || y <= 0.0 || x >= self.l || y >= self.l {
            return 0.0;
        }
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        2.0 / self.omega * (self.mu * (x - y)).exp() * self.psi(hi) * self.phi(lo)
    }
}

/// `(psi, psi')` on `[1, L]` for `psi = S(L - x) / S(L - 1)`.
fn tail_values(lambda: f64, l: f64, x: f64) -> (f64, f64) {
    let d = l - 1.0;
    let z = l - x;
    if lambda > 0.0 {
        let k = (2.0 * lambda).sqrt();
        let e = (-k * (x - 1.0)).exp();
        let den = -(-2.0 * k * d).exp_m1();
        let r = (-2.0 * k * z).exp();
        (e * (1.0 - r) / den, -k * e * (1.0 + r) / den)
    } else if lambda < 0.0 {
        let w = (-2.0 * lambda).sqrt();
        let s = (w * d).sin();
        ((w * z).sin() / s, -w * (w * z).cos() / s)
    } else {
        (z / d, -1.0 / d)
    }
}

/// Resolvent at spectral parameter `lambda > lambda_1`, written as the
/// Laplace transform of `p_t` at `xi = lambda - lambda_inf`.
pub fn resolvent(sd: &SpectralData, mu: f64, lambda: f64) -> Result<GreenData> {
    if !(lambda > sd.lambda1()) {
        return Err(Error::InvalidParameter(format!(
            "resolvent needs lambda > lambda_1 = {}",
            sd.lambda1()
        )));
    }
    let pot = &sd.potential;
    let opts = &sd.opts;
    let phi = ForwardSolution::new(pot, lambda, PruferState::DIRICHLET, sd.dv1(0.0), opts);
    let a = InnerSolution::new(pot, lambda, PruferState::DIRICHLET, opts.rk_step);
    let b = InnerSolution::new(
        pot,
        lambda,
        PruferState {
            theta: 0.5 * std::f64::consts::PI,
            log_rho: 0.0,
        },
        opts.rk_step,
    );
    let (p1, dp1) = tail_values(lambda, sd.l, 1.0);
    let (a1, da1) = a.values(1.0);
    let (b1, db1) = b.values(1.0);
    let det = a1 * db1 - b1 * da1;
    let coef = ((p1 * db1 - b1 * dp1) / det, (a1 * dp1 - da1 * p1) / det);
    let (f1, df1) = phi.values(1.0);
    let omega = p1 * df1 - dp1 * f1;
    Ok(GreenData {
        xi: lambda - sd.lambda_inf,
        lambda,
        mu,
        l: sd.l,
        omega,
        phi,
        a,
        b,
        coef,
    })
}

/// Green's function `int_0^inf e^{-xi t} p_t dt` for `xi > 0`.
pub fn green_function(sd: &SpectralData, xi: f64) -> Result<GreenData> {
    if !(xi > 0.0) {
        return Err(Error::InvalidParameter(format!("xi = {xi} must be positive")));
    }
    resolvent(sd, sd.mu, sd.lambda_inf + xi)
}

/// Expected number of lineages that reach `level` before time `t`,
/// started from `x < level`, for the process killed at 0 and at `level`:
/// `-1/2 int_0^t d_y p_s(x, y)|_{y = level} ds`.
pub fn escape_mass(
    pot: &Potential,
    mu: f64,
    level: f64,
    t: f64,
    x: f64,
    opts: &SpectralOptions,
) -> Result<f64> {
    if !(level > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "escape level {level} must exceed the support of W"
        )));
    }
    if !(x > 0.0 && x < level) {
        return Err(Error::InvalidParameter(format!("start {x} outside (0, {level})")));
    }
    let sd = SpectralData::build(pot, level, opts)?;
    escape_mass_with(&sd, mu, t, x)
}

/// As [`escape_mass`] with precomputed spectral data on `[0, level]`.
pub fn escape_mass_with(sd: &SpectralData, mu: f64, t: f64, x: f64) -> Result<f64> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    if t < sd.opts.t_min {
        return Err(Error::SeriesNotConverged(format!(
            "t = {t} below t_min = {}",
            sd.opts.t_min
        )));
    }
    let level = sd.l;
    let shift = 0.5 * (1.0 - mu * mu);
    let lambda_r = -shift;
    let mut series = 0.0;
    let mut resolvent_part = 0.0;
    let green = if lambda_r > sd.lambda1() {
        Some(resolvent(sd, mu, lambda_r)?)
    } else {
        None
    };
    for e in &sd.eigen {
        let c = e.lambda + shift;
        let coef = e.value(x) * e.deriv(level) / e.norm2;
        if green.is_some() {
            series += (c * t).exp() / c * coef;
        } else if c.abs() < 1e-12 {
            series += t * coef;
        } else {
            series += (c * t).exp_m1() / c * coef;
        }
    }
    if let Some(g) = &green {
        let (_, dpsi) = g.psi_values(level);
        resolvent_part = 2.0 / g.omega * g.phi(x) * dpsi;
    }
    Ok(-0.5 * (mu * (x - level)).exp() * (series + resolvent_part))
}

/// Exponent `e` in the bound `O(N^{-e}) e^{(mu - beta) x}` on the escape
/// mass at level `gamma L(N)` over times `O(N)`: `e = gamma alpha - 1`.
pub fn escape_bound_exponent(mu: f64, beta: f64, gamma: f64) -> f64 {
    gamma * (mu + beta) / (mu - beta) - 1.0
}
