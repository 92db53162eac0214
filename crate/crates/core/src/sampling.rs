//! Inverse-CDF samplers for tabulated densities, optionally with an
//! exponential tail.

use rand::Rng;

use crate::quadrature::gauss_panels;
use crate::spectral::LimitProfile;

/// Piecewise linear CDF on a grid.
#[derive(Debug, Clone)]
pub struct InverseCdf {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl InverseCdf {
    /// Integrates `density` on each grid cell with a 6-point Gauss rule.
    pub fn from_density<F: Fn(f64) -> f64>(xs: Vec<f64>, density: F) -> (Self, f64) {
        let mut cdf = Vec::with_capacity(xs.len());
        cdf.push(0.0);
        let mut acc = 0.0;
        for w in xs.windows(2) {
            acc += gauss_panels(|x| density(x).max(0.0), w, 6);
            cdf.push(acc);
        }
        let total = acc;
        if total > 0.0 {
            for c in cdf.iter_mut() {
                *c /= total;
            }
        }
        (InverseCdf { xs, cdf }, total)
    }

    /// From unnormalised, possibly slightly non-monotone CDF values.
    pub fn from_cdf_values(xs: Vec<f64>, mut cdf: Vec<f64>) -> Self {
        let mut run = 0.0f64;
        for c in cdf.iter_mut() {
            run = run.max(*c);
            *c = run;
        }
        let total = run;
        if total > 0.0 {
            for c in cdf.iter_mut() {
                *c /= total;
            }
        }
        InverseCdf { xs, cdf }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        if c1 <= c0 {
            return x0;
        }
        x0 + (x1 - x0) * ((u - c0) / (c1 - c0)).clamp(0.0, 1.0)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        let n = self.xs.len();
        if x >= self.xs[n - 1] {
            return 1.0;
        }
        let i = self.xs.partition_point(|&v| v <= x);
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        self.cdf[i - 1] + (self.cdf[i] - self.cdf[i - 1]) * (x - x0) / (x1 - x0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.gen::<f64>())
    }

    pub fn support(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }
}

/// Law on the half line: tabulated body on `[0, cut]` and an exponential
/// tail `rate e^{-rate (x - cut)}` beyond.
#[derive(Debug, Clone)]
pub struct MarkLaw {
    body: InverseCdf,
    tail_mass: f64,
    cut: f64,
    rate: f64,
}

impl MarkLaw {
    pub fn new<F: Fn(f64) -> f64>(density: F, cut: f64, tail_mass: f64, rate: f64, cells: usize) -> Self {
        let xs: Vec<f64> = (0..=cells).map(|i| cut * i as f64 / cells as f64).collect();
        let (body, body_mass) = InverseCdf::from_density(xs, density);
        MarkLaw {
            body,
            tail_mass: tail_mass / (tail_mass + body_mass),
            cut,
            rate,
        }
    }

    /// Law with density `h~^inf`.
    pub fn h_tilde_inf(lp: &LimitProfile) -> Self {
        Self::new(|x| lp.h_tilde(x), 1.0, lp.h_tilde_tail_mass(), lp.mu + lp.beta, 2000)
    }

    /// Law with density `Pi^inf`.
    pub fn pi_inf(lp: &LimitProfile) -> Self {
        Self::new(|x| lp.pi(x), 1.0, lp.pi_tail_mass(), 2.0 * lp.beta, 2000)
    }

    /// Tabulated law on `[0, b]` without tail.
    pub fn bounded<F: Fn(f64) -> f64>(density: F, b: f64, cells: usize) -> Self {
        Self::new(density, b, 0.0, 1.0, cells)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        if u < self.tail_mass {
            let e: f64 = -(1.0 - rng.gen::<f64>()).ln();
            self.cut + e / self.rate
        } else {
            self.body.quantile((u - self.tail_mass) / (1.0 - self.tail_mass))
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.cut {
            (1.0 - self.tail_mass) * self.body.cdf(x)
        } else {
            1.0 - self.tail_mass * (-self.rate * (x - self.cut)).exp()
        }
    }
}
