//! Prüfer propagation for `u'' = (2 lambda - W) u`.
//!
//! With `u = rho sin(theta)` and `u' = rho cos(theta)`:
//!
//! ```text
//! theta'     = cos^2 theta + (W - 2 lambda) sin^2 theta
//! (ln rho)'  = ((1 - W)/2 + lambda) sin(2 theta)
//! ```
//!
//! On pieces where `W` is constant the flow is solved exactly; elsewhere a
//! classical RK4 scheme is used. The amplitude is carried as `ln rho`.

use std::f64::consts::PI;

use crate::potential::{Piece, Potential};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruferState {
    pub theta: f64,
    pub log_rho: f64,
}

impl PruferState {
    /// `u(0) = 0`, `u'(0) = 1`.
    pub const DIRICHLET: PruferState = PruferState {
        theta: 0.0,
        log_rho: 0.0,
    };

    pub fn from_values(u: f64, du: f64) -> Self {
        PruferState {
            theta: u.atan2(du),
            log_rho: 0.5 * (u * u + du * du).ln(),
        }
    }

    pub fn u(&self) -> f64 {
        self.log_rho.exp() * self.theta.sin()
    }

    pub fn du(&self) -> f64 {
        self.log_rho.exp() * self.theta.cos()
    }
}

fn wrap_pi(d: f64) -> f64 {
    let mut d = d % (2.0 * PI);
    if d > PI {
        d -= 2.0 * PI;
    } else if d <= -PI {
        d += 2.0 * PI;
    }
    d
}

/// Exact flow over a length `s` where `u'' = c u` with constant `c`.
pub fn step_constant(st: PruferState, c: f64, s: f64) -> PruferState {
    if s == 0.0 {
        return st;
    }
    let (sn, cs) = st.theta.sin_cos();
    if c > 0.0 {
        let k = c.sqrt();
        // cosh and sinh scaled by exp(-k s)
        let e = (-2.0 * k * s).exp();
        let ch = 0.5 * (1.0 + e);
        let sh_over_k = -0.5 * (-2.0 * k * s).exp_m1() / k;
        let sh_k = 0.5 * (1.0 - e) * k;
        let u = sn * ch + cs * sh_over_k;
        let du = sn * sh_k + cs * ch;
        let r2 = (u * u + du * du).max(f64::MIN_POSITIVE);
        PruferState {
            theta: st.theta + wrap_pi(u.atan2(du) - st.theta),
            log_rho: st.log_rho + k * s + 0.5 * r2.ln(),
        }
    } else if c == 0.0 {
        let u = sn + cs * s;
        let du = cs;
        let r2 = (u * u + du * du).max(f64::MIN_POSITIVE);
        PruferState {
            theta: st.theta + wrap_pi(u.atan2(du) - st.theta),
            log_rho: st.log_rho + 0.5 * r2.ln(),
        }
    } else {
        let w = (-c).sqrt();
        let m = ((st.theta + PI) / (2.0 * PI)).floor();
        let r = st.theta - 2.0 * PI * m;
        let phi0 = 2.0 * PI * m + (w * r.sin()).atan2(r.cos());
        let phi1 = phi0 + w * s;
        let m1 = ((phi1 + PI) / (2.0 * PI)).floor();
        let r1 = phi1 - 2.0 * PI * m1;
        let theta = 2.0 * PI * m1 + r1.sin().atan2(w * r1.cos());
        let amp = |p: f64| {
            let (a, b) = p.sin_cos();
            a * a + w * w * b * b
        };
        PruferState {
            theta,
            log_rho: st.log_rho + 0.5 * (amp(phi1) / amp(phi0)).ln(),
        }
    }
}

#[inline]
fn rhs(pot: &Potential, lambda: f64, x: f64, theta: f64) -> (f64, f64) {
    let w = pot.w(x);
    let (s, c) = theta.sin_cos();
    (
        c * c + (w - 2.0 * lambda) * s * s,
        ((1.0 - w) * 0.5 + lambda) * 2.0 * s * c,
    )
}

/// One RK4 step of length `h` from `x`.
pub fn step_rk4(pot: &Potential, lambda: f64, x: f64, st: PruferState, h: f64) -> PruferState {
    let (k1t, k1r) = rhs(pot, lambda, x, st.theta);
    let (k2t, k2r) = rhs(pot, lambda, x + 0.5 * h, st.theta + 0.5 * h * k1t);
    let (k3t, k3r) = rhs(pot, lambda, x + 0.5 * h, st.theta + 0.5 * h * k2t);
    let (k4t, k4r) = rhs(pot, lambda, x + h, st.theta + h * k3t);
    PruferState {
        theta: st.theta + h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t),
        log_rho: st.log_rho + h / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r),
    }
}

/// Step size used on variable pieces: at most `rk_step` and small against
/// the local oscillation frequency.
pub fn rk_step_for(pot: &Potential, lambda: f64, rk_step: f64) -> f64 {
    let freq = (2.0 * lambda.abs() + pot.sup()).sqrt();
    rk_step.min(0.05 / freq.max(1e-12))
}

#[derive(Debug, Clone, Copy)]
enum Interval {
    Exact(f64),
    Rk,
}

/// Solution on `[0, 1]` tabulated at piece boundaries and RK nodes;
/// evaluation anywhere inside is exact (constant pieces) or a partial RK4
/// step from the left node.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub lambda: f64,
    xs: Vec<f64>,
    states: Vec<PruferState>,
    kinds: Vec<Interval>,
    potential: Potential,
}

impl InnerSolution {
    pub fn new(pot: &Potential, lambda: f64, init: PruferState, rk_step: f64) -> Self {
        let mut xs = vec![0.0];
        let mut states = vec![init];
        let mut kinds = Vec::new();
        let h_max = rk_step_for(pot, lambda, rk_step);
        let mut st = init;
        for piece in pot.pieces() {
            match piece {
                Piece::Constant { a, b, w } => {
                    let c = 2.0 * lambda - w;
                    st = step_constant(st, c, b - a);
                    xs.push(b);
                    states.push(st);
                    kinds.push(Interval::Exact(c));
                }
                Piece::Variable { a, b } => {
                    let n = ((b - a) / h_max).ceil().max(1.0) as usize;
                    let h = (b - a) / n as f64;
                    for i in 0..n {
                        let x = a + i as f64 * h;
                        st = step_rk4(pot, lambda, x, st, h);
                        xs.push(if i + 1 == n { b } else { x + h });
                        states.push(st);
                        kinds.push(Interval::Rk);
                    }
                }
            }
        }
        InnerSolution {
            lambda,
            xs,
            states,
            kinds,
            potential: pot.clone(),
        }
    }

    /// State at `x = 1`.
    pub fn end(&self) -> PruferState {
        *self.states.last().unwrap()
    }

    /// State at `x` in `[0, 1]`.
    pub fn state(&self, x: f64) -> PruferState {
        let x = x.clamp(0.0, 1.0);
        let i = self.xs.partition_point(|&v| v <= x);
        if i == 0 {
            return self.states[0];
        }
        if i >= self.xs.len() {
            return self.end();
        }
        let (x0, st) = (self.xs[i - 1], self.states[i - 1]);
        let d = x - x0;
        if d == 0.0 {
            return st;
        }
        match self.kinds[i - 1] {
            Interval::Exact(c) => step_constant(st, c, d),
            Interval::Rk => step_rk4(&self.potential, self.lambda, x0, st, d),
        }
    }

    /// `(u, u')` at `x` in `[0, 1]`.
    pub fn values(&self, x: f64) -> (f64, f64) {
        let st = self.state(x);
        (st.u(), st.du())
    }

    /// Node abscissae (piece boundaries and RK nodes).
    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }
}

/// Phase `theta_lambda(L)` of the Dirichlet solution.
pub fn phase_at(pot: &Potential, lambda: f64, l: f64, rk_step: f64) -> f64 {
    let inner = InnerSolution::new(pot, lambda, PruferState::DIRICHLET, rk_step);
    step_constant(inner.end(), 2.0 * lambda, l - 1.0).theta
}

/// Tabulated Prüfer variables on `[0, L]`.
#[derive(Debug, Clone)]
pub struct PruferTrace {
    pub lambda: f64,
    pub xs: Vec<f64>,
    pub theta: Vec<f64>,
    pub log_rho: Vec<f64>,
}

impl PruferTrace {
    pub fn rho(&self, i: usize) -> f64 {
        self.log_rho[i].exp()
    }
}

/// Traces the Dirichlet solution on `[0, L]` with grid spacing at most `grid_step`.
pub fn prufer_trace(
    pot: &Potential,
    lambda: f64,
    l: f64,
    grid_step: f64,
    rk_step: f64,
) -> PruferTrace {
    let inner = InnerSolution::new(pot, lambda, PruferState::DIRICHLET, rk_step);
    let n = (l / grid_step).ceil().max(1.0) as usize;
    let mut xs = Vec::with_capacity(n + 1);
    let mut theta = Vec::with_capacity(n + 1);
    let mut log_rho = Vec::with_capacity(n + 1);
    let at_one = inner.end();
    for i in 0..=n {
        let x = l * i as f64 / n as f64;
        let st = if x <= 1.0 {
            inner.state(x)
        } else {
            step_constant(at_one, 2.0 * lambda, x - 1.0)
        };
        xs.push(x);
        theta.push(st.theta);
        log_rho.push(st.log_rho);
    }
    PruferTrace {
        lambda,
        xs,
        theta,
        log_rho,
    }
}
