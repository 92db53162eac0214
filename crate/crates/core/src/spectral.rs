//! Dirichlet spectrum of `v''/2 + W v/2 = lambda v` on `[0, L]` and of the
//! limiting problem on the half line.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::prufer::{phase_at, step_constant, InnerSolution, PruferState};
use crate::quadrature::{adaptive_simpson, gauss_panels, simpson};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Pulled,
    Semipushed,
    FullyPushed,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Pulled => "pulled",
            Regime::Semipushed => "semipushed",
            Regime::FullyPushed => "fully_pushed",
        }
    }
}

/// Regime from the top eigenvalue of the limiting problem.
pub fn classify_regime(lambda_inf: f64) -> Regime {
    if lambda_inf <= 0.0 {
        Regime::Pulled
    } else if lambda_inf <= 1.0 / 16.0 {
        Regime::Semipushed
    } else {
        Regime::FullyPushed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralOptions {
    /// Maximal RK4 step on pieces where `W` is not constant.
    pub rk_step: f64,
    /// Tabulation spacing used for zero counting and quadrature grids.
    pub grid_step: f64,
    /// Smallest time at which the eigen-series is used.
    pub t_min: f64,
    /// Series truncation target `exp((lambda_M - lambda_1) t_min)`.
    pub series_tol: f64,
    /// Bisection width for eigenvalues.
    pub lambda_tol: f64,
    /// Fixed number of eigenpairs; overrides the truncation rule.
    pub n_terms: Option<usize>,
    pub max_terms: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            rk_step: 1e-3,
            grid_step: 1e-2,
            t_min: 0.05,
            series_tol: 1e-12,
            lambda_tol: 1e-12,
            n_terms: None,
            max_terms: 5000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenvalueResult {
    pub k: usize,
    pub lambda: f64,
    /// `|theta(L) - k pi|` at the returned eigenvalue.
    pub phase_residual: f64,
    pub iterations: usize,
}

/// `k`-th Dirichlet eigenvalue on `[0, L]` (`k >= 1`, decreasing in `k`).
pub fn eigenvalue(pot: &Potential, l: f64, k: usize, opts: &SpectralOptions) -> Result<EigenvalueResult> {
    if k == 0 {
        return Err(Error::InvalidParameter("eigenvalue index starts at 1".into()));
    }
    if !(l > 1.0) {
        return Err(Error::InvalidParameter(format!("domain length {l} must exceed 1")));
    }
    let target = k as f64 * PI;
    let f = |lam: f64| phase_at(pot, lam, l, opts.rk_step) - target;
    let base = -(target * target) / (2.0 * l * l);
    let pad = 1e-9 * (1.0 + base.abs());
    let (mut lo, mut hi) = (base - pad, 0.5 * pot.sup() + base + pad);
    let (mut flo, mut fhi) = (f(lo), f(hi));
    if !(flo >= 0.0 && fhi <= 0.0) {
        return Err(Error::Bracketing { k, lo, hi });
    }
    let mut iterations = 0;
    while hi - lo > opts.lambda_tol * lo.abs().max(1.0) && iterations < 200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm > 0.0 {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
            fhi = fm;
        }
        iterations += 1;
    }
    // secant polish inside the final bracket
    for _ in 0..30 {
        if flo == fhi || !(flo.is_finite() && fhi.is_finite()) {
            break;
        }
        let x = hi - fhi * (hi - lo) / (fhi - flo);
        if !(x > lo && x < hi) {
            break;
        }
        let fx = f(x);
        iterations += 1;
        if fx > 0.0 {
            lo = x;
            flo = fx;
        } else {
            hi = x;
            fhi = fx;
        }
        if fx.abs() < 1e-14 || hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(1e-300) {
            break;
        }
    }
    let (lambda, res) = if flo.abs() <= fhi.abs() { (lo, flo) } else { (hi, fhi) };
    Ok(EigenvalueResult {
        k,
        lambda,
        phase_residual: res.abs(),
        iterations,
    })
}

#[derive(Debug, Clone, Copy)]
enum Tail {
    /// `u = amp * sinh(kappa (L - x)) / cosh(kappa (L - 1))`
    Growing { kappa: f64, amp: f64 },
    /// `u = amp * sin(omega (L - x))`
    Oscillating { omega: f64, amp: f64 },
    /// `u = amp * (L - x)`
    Linear { amp: f64 },
}

/// Dirichlet eigenfunction normalised by `u'(0) = 1`.
#[derive(Debug, Clone)]
pub struct Eigenfunction {
    pub k: usize,
    pub lambda: f64,
    pub l: f64,
    pub norm2: f64,
    pub n_zeros: usize,
    pub phase_residual: f64,
    inner: InnerSolution,
    tail: Tail,
}

impl Eigenfunction {
    pub fn build(pot: &Potential, l: f64, ev: &EigenvalueResult, opts: &SpectralOptions) -> Result<Self> {
        let lambda = ev.lambda;
        let inner = InnerSolution::new(pot, lambda, PruferState::DIRICHLET, opts.rk_step);
        let (u1, du1) = {
            let s = inner.end();
            (s.u(), s.du())
        };
        let d = l - 1.0;
        let (tail, tail_norm2) = if lambda > 0.0 {
            let kappa = (2.0 * lambda).sqrt();
            let th = (kappa * d).tanh();
            let amp = (u1 * th - du1 / kappa) / (th * th + 1.0);
            let n2 = amp * amp * (th / (2.0 * kappa) - 0.5 * d * (1.0 - th * th));
            (Tail::Growing { kappa, amp }, n2)
        } else if lambda < 0.0 {
            let omega = (-2.0 * lambda).sqrt();
            let (s, c) = (omega * d).sin_cos();
            let amp = u1 * s - du1 / omega * c;
            let n2 = amp * amp * (0.5 * d - (2.0 * omega * d).sin() / (4.0 * omega));
            (Tail::Oscillating { omega, amp }, n2)
        } else {
            let amp = (u1 * d - du1) / (d * d + 1.0);
            (Tail::Linear { amp }, amp * amp * d * d * d / 3.0)
        };
        let mut ef = Eigenfunction {
            k: ev.k,
            lambda,
            l,
            norm2: 0.0,
            n_zeros: 0,
            phase_residual: ev.phase_residual,
            inner,
            tail,
        };
        let breaks = panel_breaks(pot, 0.0, 1.0, 0.02);
        let inner_norm2 = gauss_panels(
            |x| {
                let u = ef.value(x);
                u * u
            },
            &breaks,
            10,
        );
        ef.norm2 = inner_norm2 + tail_norm2;
        ef.n_zeros = ef.count_zeros(opts.grid_step);
        if ef.n_zeros + 1 != ev.k {
            return Err(Error::ZeroCount {
                k: ev.k,
                found: ef.n_zeros,
                expected: ev.k - 1,
            });
        }
        Ok(ef)
    }

    fn count_zeros(&self, step: f64) -> usize {
        let n = (self.l / step).ceil() as usize;
        let mut count = 0;
        let mut last = 0.0f64;
        for i in 1..n {
            let u = self.value(self.l * i as f64 / n as f64);
            if u != 0.0 {
                if last != 0.0 && (u > 0.0) != (last > 0.0) {
                    count += 1;
                }
                last = u;
            }
        }
        count
    }

    /// `(u(x), u'(x))`, zero outside `[0, L]`.
    pub fn values(&self, x: f64) -> (f64, f64) {
        if x < 0.0 || x > self.l {
            return (0.0, 0.0);
        }
        if x <= 1.0 {
            return self.inner.values(x);
        }
        let d = self.l - 1.0;
        match self.tail {
            Tail::Growing { kappa, amp } => {
                let e1 = (-kappa * (x - 1.0)).exp();
                let r = (-2.0 * kappa * (self.l - x)).exp();
                let den = 1.0 + (-2.0 * kappa * d).exp();
                (amp * e1 * (1.0 - r) / den, -amp * kappa * e1 * (1.0 + r) / den)
            }
            Tail::Oscillating { omega, amp } => {
                let (s, c) = (omega * (self.l - x)).sin_cos();
                (amp * s, -amp * omega * c)
            }
            Tail::Linear { amp } => (amp * (self.l - x), -amp),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.values(x).0
    }

    pub fn deriv(&self, x: f64) -> f64 {
        self.values(x).1
    }
}

/// Break points on `[a, b]` aligned with the potential pieces, spacing at most `h`.
pub fn panel_breaks(pot: &Potential, a: f64, b: f64, h: f64) -> Vec<f64> {
    let mut cuts = vec![a, b];
    for p in pot.pieces() {
        let (pa, pb) = p.bounds();
        for c in [pa, pb] {
            if c > a && c < b {
                cuts.push(c);
            }
        }
    }
    if a < 1.0 && b > 1.0 {
        cuts.push(1.0);
    }
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();
    let mut out = vec![cuts[0]];
    for w in cuts.windows(2) {
        let n = ((w[1] - w[0]) / h).ceil().max(1.0) as usize;
        for i in 1..=n {
            out.push(w[0] + (w[1] - w[0]) * i as f64 / n as f64);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitEigenvalue {
    pub lambda: f64,
    pub regime: Regime,
    /// Domain length used for the finite-`L` cross-check (0 when pulled).
    pub check_l: f64,
    pub check_lambda: f64,
}

/// Matching function whose unique root in `(0, sup W / 2)` is the top
/// eigenvalue of the half-line problem.
fn limit_matching(pot: &Potential, lambda: f64, rk_step: f64) -> f64 {
    let inner = InnerSolution::new(pot, lambda, PruferState::DIRICHLET, rk_step);
    let kappa = (2.0 * lambda).sqrt();
    inner.end().theta - PI + (1.0 / kappa).atan()
}

/// Whether the half-line problem has a positive eigenvalue.
pub fn has_bound_state(pot: &Potential, rk_step: f64) -> bool {
    if pot.is_zero() {
        return false;
    }
    let inner = InnerSolution::new(pot, 0.0, PruferState::DIRICHLET, rk_step);
    inner.end().theta > 0.5 * PI
}

/// `lambda_1^inf`, the supremum of the spectrum on the half line, with a
/// cross-check against a long finite domain.
pub fn limit_top_eigenvalue(pot: &Potential, opts: &SpectralOptions) -> Result<LimitEigenvalue> {
    if !has_bound_state(pot, opts.rk_step) {
        return Ok(LimitEigenvalue {
            lambda: 0.0,
            regime: Regime::Pulled,
            check_l: 0.0,
            check_lambda: 0.0,
        });
    }
    let g = |lam: f64| limit_matching(pot, lam, opts.rk_step);
    let (mut lo, mut hi) = (1e-12, 0.5 * pot.sup() - 1e-12);
    let (mut glo, mut ghi) = (g(lo), g(hi));
    if !(glo > 0.0 && ghi < 0.0) {
        return Err(Error::Bracketing { k: 1, lo, hi });
    }
    for _ in 0..200 {
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm > 0.0 {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
            ghi = gm;
        }
    }
    let lambda = if glo.abs() <= ghi.abs() { lo } else { hi };
    let beta = (2.0 * lambda).sqrt();
    let check_l = 1.0 + (25.0 / beta).min(1e8);
    let check = eigenvalue(pot, check_l, 1, opts)?;
    if (check.lambda - lambda).abs() > 1e-9 * lambda.max(1.0) {
        return Err(Error::SpectralInconsistency(format!(
            "lambda_1({check_l:.3}) = {} but half-line root = {lambda}",
            check.lambda
        )));
    }
    Ok(LimitEigenvalue {
        lambda,
        regime: classify_regime(lambda),
        check_l,
        check_lambda: check.lambda,
    })
}

/// Harmonic objects of the half-line problem, `v_1^inf(1) = 1`.
#[derive(Debug, Clone)]
pub struct LimitProfile {
    pub lambda_inf: f64,
    pub mu: f64,
    pub beta: f64,
    /// `(int e^{-mu x} v_1^inf)^{-1}`
    pub tilde_c: f64,
    /// `||v_1^inf||^2`
    pub norm2: f64,
    /// Present only in the fully pushed regime.
    pub sigma2: Option<f64>,
    pub regime: Regime,
    inner: InnerSolution,
    scale: f64,
    potential: Potential,
}

impl LimitProfile {
    pub fn build(pot: &Potential, lambda_inf: f64, opts: &SpectralOptions) -> Result<Self> {
        if !(lambda_inf > 0.0) {
            return Err(Error::UnsupportedRegime {
                regime: Regime::Pulled.name(),
                required: "lambda_1^inf > 0",
            });
        }
        let inner = InnerSolution::new(pot, lambda_inf, PruferState::DIRICHLET, opts.rk_step);
        let scale = 1.0 / inner.end().u();
        let mu = (1.0 + 2.0 * lambda_inf).sqrt();
        let beta = (2.0 * lambda_inf).sqrt();
        let regime = classify_regime(lambda_inf);
        let mut lp = LimitProfile {
            lambda_inf,
            mu,
            beta,
            tilde_c: 1.0,
            norm2: 1.0,
            sigma2: None,
            regime,
            inner,
            scale,
            potential: pot.clone(),
        };
        let breaks = panel_breaks(pot, 0.0, 1.0, 0.02);
        let mass = gauss_panels(|x| (-mu * x).exp() * lp.v(x), &breaks, 10) + (-mu).exp() / (mu + beta);
        lp.tilde_c = 1.0 / mass;
        lp.norm2 = gauss_panels(|x| lp.v(x).powi(2), &breaks, 10) + 0.5 / beta;
        if regime == Regime::FullyPushed && mu < 3.0 * beta {
            let inner_part = gauss_panels(|x| lp.sigma2_integrand(x), &breaks, 10);
            lp.sigma2 = Some(2.0 * (inner_part + lp.sigma2_tail()));
        }
        Ok(lp)
    }

    /// `v_1^inf(x)`; `exp(-beta (x - 1))` beyond 1.
    pub fn v(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x <= 1.0 {
            self.scale * self.inner.values(x).0
        } else {
            (-self.beta * (x - 1.0)).exp()
        }
    }

    pub fn dv(&self, x: f64) -> f64 {
        if x <= 0.0 {
            self.scale * self.inner.values(0.0).1
        } else if x <= 1.0 {
            self.scale * self.inner.values(x).1
        } else {
            -self.beta * (-self.beta * (x - 1.0)).exp()
        }
    }

    /// `h^inf(x) = e^{mu x} v / (c~ ||v||^2)`
    pub fn h(&self, x: f64) -> f64 {
        if x <= 1.0 {
            (self.mu * x).exp() * self.v(x) / (self.tilde_c * self.norm2)
        } else {
            ((self.mu - self.beta) * x + self.beta).exp() / (self.tilde_c * self.norm2)
        }
    }

    /// `h~^inf(x) = c~ e^{-mu x} v`, a probability density on the half line.
    pub fn h_tilde(&self, x: f64) -> f64 {
        if x <= 1.0 {
            self.tilde_c * (-self.mu * x).exp() * self.v(x)
        } else {
            self.tilde_c * (-(self.mu + self.beta) * x + self.beta).exp()
        }
    }

    /// `Pi^inf = (v / ||v||)^2`
    pub fn pi(&self, x: f64) -> f64 {
        self.v(x).powi(2) / self.norm2
    }

    /// `r (h^inf)^2 h~^inf`
    pub fn sigma2_integrand(&self, x: f64) -> f64 {
        let h = self.h(x);
        self.potential.rate(x) * h * h * self.h_tilde(x)
    }

    /// Closed form of the integral of `sigma2_integrand` over `[1, inf)`.
    pub fn sigma2_tail(&self) -> f64 {
        self.mu.exp() / (2.0 * (3.0 * self.beta - self.mu) * self.tilde_c * self.norm2 * self.norm2)
    }

    /// `Sigma^2` by composite Simpson on `[0, 1]` with `n` panels.
    pub fn sigma2_simpson(&self, n: usize) -> f64 {
        2.0 * (simpson(|x| self.sigma2_integrand(x), 0.0, 1.0, n) + self.sigma2_tail())
    }

    /// `Sigma^2` by adaptive Simpson on `[0, 1]`.
    pub fn sigma2_adaptive(&self, tol: f64) -> f64 {
        2.0 * (adaptive_simpson(&|x| self.sigma2_integrand(x), 0.0, 1.0, tol) + self.sigma2_tail())
    }

    /// Mass of `h~^inf` on `[1, inf)`.
    pub fn h_tilde_tail_mass(&self) -> f64 {
        self.tilde_c * (-self.mu).exp() / (self.mu + self.beta)
    }

    /// Mass of `Pi^inf` on `[1, inf)`.
    pub fn pi_tail_mass(&self) -> f64 {
        0.5 / (self.beta * self.norm2)
    }
}

/// Constants needed for the `N`-dependent scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarmonicSummary {
    pub n: f64,
    pub l: f64,
    pub lambda_inf: f64,
    pub mu: f64,
    pub beta: f64,
    pub alpha: f64,
    pub tilde_c: f64,
    pub sigma2: f64,
    pub norm2_inf: f64,
}

/// `L(N) = log N / (mu - beta)`, rounded up to a multiple of `grid`.
pub fn cutoff_for(n: f64, mu: f64, beta: f64, grid: f64) -> f64 {
    let l = n.ln() / (mu - beta);
    (l / grid - 1e-9).ceil() * grid
}

/// Spectral data of the problem on `[0, L]`.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub potential: Potential,
    pub l: f64,
    pub opts: SpectralOptions,
    pub lambda_inf: f64,
    pub regime: Regime,
    pub mu: f64,
    pub beta: f64,
    pub eigen: Vec<Eigenfunction>,
    pub limit: Option<LimitProfile>,
    /// Number of positive eigenvalues.
    pub n_positive: usize,
    v1_scale: f64,
}

impl SpectralData {
    pub fn build(pot: &Potential, l: f64, opts: &SpectralOptions) -> Result<Self> {
        pot.validate()?;
        let lim = limit_top_eigenvalue(pot, opts)?;
        let lambda_inf = lim.lambda;
        let mu = (1.0 + 2.0 * lambda_inf).sqrt();
        let beta = (2.0 * lambda_inf).sqrt();
        let mut eigen: Vec<Eigenfunction> = Vec::new();
        let stop = opts.series_tol.ln() / opts.t_min;
        let mut k = 1;
        loop {
            if k > opts.max_terms {
                return Err(Error::SeriesNotConverged(format!(
                    "more than {} eigenpairs needed",
                    opts.max_terms
                )));
            }
            let ev = eigenvalue(pot, l, k, opts)?;
            eigen.push(Eigenfunction::build(pot, l, &ev, opts)?);
            let done = match opts.n_terms {
                Some(n) => k >= n,
                None => ev.lambda - eigen[0].lambda <= stop,
            };
            if done {
                break;
            }
            k += 1;
        }
        if eigen[0].lambda > lambda_inf + 1e-9 * lambda_inf.abs().max(1.0) {
            return Err(Error::SpectralInconsistency(format!(
                "lambda_1(L) = {} exceeds lambda_1^inf = {lambda_inf}",
                eigen[0].lambda
            )));
        }
        let limit = if lambda_inf > 0.0 {
            Some(LimitProfile::build(pot, lambda_inf, opts)?)
        } else {
            None
        };
        let v1_scale = 1.0 / eigen[0].value(1.0);
        let n_positive = eigen.iter().filter(|e| e.lambda > 0.0).count();
        Ok(SpectralData {
            potential: pot.clone(),
            l,
            opts: opts.clone(),
            lambda_inf,
            regime: lim.regime,
            mu,
            beta,
            eigen,
            limit,
            n_positive,
            v1_scale,
        })
    }

    pub fn n_terms(&self) -> usize {
        self.eigen.len()
    }

    pub fn lambda(&self, k: usize) -> f64 {
        self.eigen[k - 1].lambda
    }

    pub fn lambda1(&self) -> f64 {
        self.eigen[0].lambda
    }

    /// `alpha = (mu + beta) / (mu - beta)`
    pub fn alpha(&self) -> f64 {
        (self.mu + self.beta) / (self.mu - self.beta)
    }

    /// Ground state normalised by `v_1(1) = 1`.
    pub fn v1(&self, x: f64) -> f64 {
        self.v1_scale * self.eigen[0].value(x)
    }

    pub fn dv1(&self, x: f64) -> f64 {
        self.v1_scale * self.eigen[0].deriv(x)
    }

    pub fn norm2_v1(&self) -> f64 {
        self.eigen[0].norm2 * self.v1_scale * self.v1_scale
    }

    /// `c~`, or 1 when the half-line problem has no bound state.
    pub fn tilde_c(&self) -> f64 {
        self.limit.as_ref().map_or(1.0, |l| l.tilde_c)
    }

    pub fn limit(&self) -> Result<&LimitProfile> {
        self.limit.as_ref().ok_or(Error::UnsupportedRegime {
            regime: self.regime.name(),
            required: "semipushed or fully pushed",
        })
    }

    pub fn sigma2(&self) -> Result<f64> {
        self.limit()?.sigma2.ok_or(Error::UnsupportedRegime {
            regime: self.regime.name(),
            required: "fully pushed",
        })
    }

    /// `h(t, x) = e^{(lambda_inf - lambda_1) t} e^{mu x} v_1(x) / (c~ ||v_1||^2)`
    pub fn h(&self, t: f64, x: f64) -> f64 {
        ((self.lambda_inf - self.lambda1()) * t + self.mu * x).exp() * self.v1(x)
            / (self.tilde_c() * self.norm2_v1())
    }

    /// `h~(t, x) = c~ e^{(lambda_1 - lambda_inf) t} e^{-mu x} v_1(x)`
    pub fn h_tilde(&self, t: f64, x: f64) -> f64 {
        self.tilde_c() * ((self.lambda1() - self.lambda_inf) * t - self.mu * x).exp() * self.v1(x)
    }

    /// Stationary density of the spine, `v_1^2 / ||v_1||^2`.
    pub fn pi(&self, x: f64) -> f64 {
        let e = &self.eigen[0];
        e.value(x).powi(2) / e.norm2
    }

    pub fn harmonic_summary(&self, n: f64) -> Result<HarmonicSummary> {
        let lp = self.limit()?;
        let sigma2 = self.sigma2()?;
        Ok(HarmonicSummary {
            n,
            l: cutoff_for(n, self.mu, self.beta, self.opts.grid_step),
            lambda_inf: self.lambda_inf,
            mu: self.mu,
            beta: self.beta,
            alpha: self.alpha(),
            tilde_c: lp.tilde_c,
            sigma2,
            norm2_inf: lp.norm2,
        })
    }

    /// Number of leading terms with `e^{(lambda_k - lambda_1) t} > tol`.
    pub fn terms_for(&self, t: f64, tol: f64) -> usize {
        let l1 = self.lambda1();
        let cut = tol.ln();
        let n = self
            .eigen
            .iter()
            .take_while(|e| (e.lambda - l1) * t > cut)
            .count();
        n.clamp(1, self.eigen.len())
    }

    /// Bound on the size of the first omitted series term at time `t`.
    pub fn truncation_indicator(&self, t: f64) -> f64 {
        let last = self.eigen.last().unwrap().lambda;
        ((last - self.lambda1()) * t).exp()
    }
}

/// Builds the spectral data on `[0, L(N)]`.
pub fn harmonic_data(pot: &Potential, n: f64, opts: &SpectralOptions) -> Result<(SpectralData, HarmonicSummary)> {
    let lim = limit_top_eigenvalue(pot, opts)?;
    if lim.regime != Regime::FullyPushed {
        return Err(Error::UnsupportedRegime {
            regime: lim.regime.name(),
            required: "fully pushed",
        });
    }
    let mu = (1.0 + 2.0 * lim.lambda).sqrt();
    let beta = (2.0 * lim.lambda).sqrt();
    let l = cutoff_for(n, mu, beta, opts.grid_step);
    let sd = SpectralData::build(pot, l, opts)?;
    let hs = sd.harmonic_summary(n)?;
    Ok((sd, hs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NegativeSpectrumCheck {
    pub n_negative: usize,
    /// Eigenvalues checked in the tangent form (away from poles).
    pub n_checked: usize,
    /// `max |tan(a)/a + tan(c D)/c|` over checked eigenvalues.
    pub max_residual: f64,
    /// `max |a cos(a) sin(cD) + c sin(a) cos(cD)| / (a + c)` over all.
    pub max_cross_residual: f64,
}

/// Checks negative eigenvalues of a unit-width step of height `b` against
/// `tan(a)/a = -tan(c (L-1))/c`, `a = sqrt(b - 2 lambda)`, `c = sqrt(-2 lambda)`.
pub fn verify_negative_spectrum_example(sd: &SpectralData) -> Result<NegativeSpectrumCheck> {
    let b = match sd.potential.shape {
        crate::potential::Shape::Step { height, width } if width == 1.0 => height * sd.potential.scale,
        _ => {
            return Err(Error::InvalidPotential(
                "negative spectrum check needs a unit-width step".into(),
            ))
        }
    };
    let d = sd.l - 1.0;
    let mut out = NegativeSpectrumCheck {
        n_negative: 0,
        n_checked: 0,
        max_residual: 0.0,
        max_cross_residual: 0.0,
    };
    for e in sd.eigen.iter().filter(|e| e.lambda < 0.0) {
        out.n_negative += 1;
        let a = (b - 2.0 * e.lambda).sqrt();
        let c = (-2.0 * e.lambda).sqrt();
        let cross = (a * a.cos() * (c * d).sin() + c * a.sin() * (c * d).cos()).abs() / (a + c);
        out.max_cross_residual = out.max_cross_residual.max(cross);
        if a.cos().abs() > 1e-3 && (c * d).cos().abs() > 1e-3 {
            let res = (a.tan() / a + (c * d).tan() / c).abs();
            out.n_checked += 1;
            out.max_residual = out.max_residual.max(res);
        }
    }
    Ok(out)
}

/// Smallest `eps` with `lambda_1^inf(eps W) > 0`, by bisection.
pub fn binding_threshold(shape: &Potential, opts: &SpectralOptions) -> Result<f64> {
    threshold(shape, |p| has_bound_state(p, opts.rk_step))
}

/// Smallest `eps` with `lambda_1^inf(eps W) > 1/16`, by bisection.
pub fn pushed_threshold(shape: &Potential, opts: &SpectralOptions) -> Result<f64> {
    threshold(shape, |p| {
        limit_top_eigenvalue(p, opts)
            .map(|l| l.lambda > 1.0 / 16.0)
            .unwrap_or(false)
    })
}

fn threshold<F: Fn(&Potential) -> bool>(shape: &Potential, pred: F) -> Result<f64> {
    if shape.is_zero() {
        return Err(Error::InvalidPotential("zero shape has no threshold".into()));
    }
    let mut hi = 1.0;
    let mut n = 0;
    while !pred(&shape.scaled(hi)) {
        hi *= 2.0;
        n += 1;
        if n > 60 {
            return Err(Error::Numerical("threshold not bracketed".into()));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if pred(&shape.scaled(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `theta_lambda(L)` exposed for diagnostics.
pub fn phase(pot: &Potential, lambda: f64, l: f64, opts: &SpectralOptions) -> f64 {
    phase_at(pot, lambda, l, opts.rk_step)
}

/// State of the Dirichlet solution at `x`, continued exactly beyond 1.
pub fn dirichlet_state(pot: &Potential, lambda: f64, x: f64, opts: &SpectralOptions) -> PruferState {
    let inner = InnerSolution::new(pot, lambda, PruferState::DIRICHLET, opts.rk_step);
    if x <= 1.0 {
        inner.state(x)
    } else {
        step_constant(inner.end(), 2.0 * lambda, x - 1.0)
    }
}
