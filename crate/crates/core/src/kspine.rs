//! k-spine trees and the many-to-few estimator.
//!
//! A k-spine tree of depth `t` has planar coalescence depths `U_1..U_{k-1}`
//! i.i.d. uniform on `[0, t]`; the branch point between planar leaves `i < j`
//! sits at time `t - max(U_i..U_{j-1})`. Marks follow the 1-spine, whose
//! transition density is `q_s`. With acceleration `N`, spine durations are
//! multiplied by `N` inside the kernel only.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::cpp::{permutation, planar_distance};
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use crate::rng::{stream, Stream};
use crate::sampling::InverseCdf;
use crate::spectral::SpectralData;
use crate::stats::{effective_sample_size, mean_se};

/// Number of abscissae of the tabulated spine CDFs.
pub const SPINE_GRID: usize = 2000;
/// Euler step for spine segments shorter than `t_min`.
pub const EULER_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchPoint {
    /// Time `|v|` of the branch point (unaccelerated units).
    pub time: f64,
    pub mark: f64,
    /// Planar index `m`: leaves `..=m` go left, the rest right.
    pub split: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpineTree {
    pub k: usize,
    pub t: f64,
    /// Acceleration factor; 1 for the plain k-spine.
    pub n: f64,
    pub u: Vec<f64>,
    pub branches: Vec<BranchPoint>,
    /// Leaf marks in planar order.
    pub leaves: Vec<f64>,
    /// Planar position of labelled leaf `i`.
    pub sigma: Vec<usize>,
}

impl SpineTree {
    /// `U_{i,j}` in planar indices.
    pub fn u_planar(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            planar_distance(&self.u, i, j)
        }
    }

    /// `U_{sigma_i, sigma_j}` for labelled leaves.
    pub fn u_labelled(&self, i: usize, j: usize) -> f64 {
        self.u_planar(self.sigma[i], self.sigma[j])
    }

    pub fn leaf_mark(&self, i: usize) -> f64 {
        self.leaves[self.sigma[i]]
    }

    pub fn depth_of_first_branch(&self) -> Option<f64> {
        self.u.iter().cloned().reduce(f64::max)
    }
}

/// Samples spine paths from spectral data on `[0, L]`.
pub struct SpineSampler<'a> {
    pub sd: &'a SpectralData,
    grid: Vec<f64>,
    /// `cum[k][i] = int_0^{grid[i]} u_1 u_k / ||u_k||^2`
    cum: Vec<Vec<f64>>,
}

impl<'a> SpineSampler<'a> {
    pub fn new(sd: &'a SpectralData) -> Self {
        let l = sd.l;
        // abscissae at quantiles of (uniform + Pi) / 2
        let fine = 20 * SPINE_GRID;
        let xs: Vec<f64> = (0..=fine).map(|i| l * i as f64 / fine as f64).collect();
        let (mix, _) = InverseCdf::from_density(xs, |y| 0.5 / l + 0.5 * sd.pi(y));
        let mut grid: Vec<f64> = (0..SPINE_GRID)
            .map(|i| mix.quantile(i as f64 / (SPINE_GRID - 1) as f64))
            .collect();
        grid[0] = 0.0;
        grid[SPINE_GRID - 1] = l;
        grid.dedup();
        let m = sd.eigen.len();
        let (gx, gw) = gauss_legendre(6);
        let mut cum = vec![vec![0.0; grid.len()]; m];
        let mut acc = vec![0.0; m];
        for i in 1..grid.len() {
            let (a, b) = (grid[i - 1], grid[i]);
            for (x, w) in gx.iter().zip(&gw) {
                let y = 0.5 * (a + b) + 0.5 * (b - a) * x;
                let wy = 0.5 * (b - a) * w;
                let u1 = sd.eigen[0].value(y);
                for (k, e) in sd.eigen.iter().enumerate() {
                    acc[k] += wy * u1 * e.value(y) / e.norm2;
                }
            }
            for k in 0..m {
                cum[k][i] = acc[k];
            }
        }
        SpineSampler { sd, grid, cum }
    }

    /// Spine drift `v_1'/v_1`.
    pub fn drift(&self, x: f64) -> f64 {
        let (v, dv) = self.sd.eigen[0].values(x);
        dv / v
    }

    /// Endpoint of a spine started at `x` after time `s`.
    pub fn step<R: Rng + ?Sized>(&self, x: f64, s: f64, rng: &mut R) -> Result<f64> {
        if s <= 0.0 {
            return Ok(x);
        }
        if s >= self.sd.opts.t_min {
            Ok(self.kernel_law(x, s).sample(rng))
        } else {
            self.euler(x, s, rng)
        }
    }

    /// Tabulated law `q_s(x, .)`.
    pub fn kernel_law(&self, x: f64, s: f64) -> InverseCdf {
        let sd = self.sd;
        let n = sd.terms_for(s, sd.opts.series_tol);
        let l1 = sd.lambda1();
        let u1x = sd.eigen[0].value(x);
        let mut cdf = vec![0.0; self.grid.len()];
        for k in 0..n {
            let e = &sd.eigen[k];
            let w = ((e.lambda - l1) * s).exp() * e.value(x) / u1x;
            for (c, ck) in cdf.iter_mut().zip(&self.cum[k]) {
                *c += w * ck;
            }
        }
        InverseCdf::from_cdf_values(self.grid.clone(), cdf)
    }

    fn euler<R: Rng + ?Sized>(&self, x: f64, s: f64, rng: &mut R) -> Result<f64> {
        let l = self.sd.l;
        let mut y = x;
        let mut left = s;
        while left > 0.0 {
            let mut h = EULER_STEP.min(left);
            let mut halvings = 0;
            loop {
                let z: f64 = rng.sample(StandardNormal);
                let cand = y + self.drift(y) * h + h.sqrt() * z;
                if cand > 0.0 && cand < l {
                    y = cand;
                    break;
                }
                halvings += 1;
                if halvings > 40 {
                    return Err(Error::Numerical(format!("spine stuck at the boundary near {y}")));
                }
                h *= 0.5;
            }
            left -= h;
        }
        Ok(y)
    }

    /// Samples a k-spine tree of depth `t` from `x0`, accelerated by `n`.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, t: f64, x0: f64, n: f64, rng: &mut R) -> Result<SpineTree> {
        if k == 0 || !(t > 0.0) || !(n >= 1.0) {
            return Err(Error::InvalidParameter(format!("k-spine needs k >= 1, t > 0, N >= 1 (k={k}, t={t}, N={n})")));
        }
        if !(x0 > 0.0 && x0 < self.sd.l) {
            return Err(Error::InvalidParameter(format!("x0 = {x0} outside (0, {})", self.sd.l)));
        }
        let u: Vec<f64> = (0..k - 1).map(|_| rng.gen::<f64>() * t).collect();
        let mut tree = SpineTree {
            k,
            t,
            n,
            u,
            branches: Vec::with_capacity(k - 1),
            leaves: vec![0.0; k],
            sigma: Vec::new(),
        };
        self.grow(&mut tree, 0, k - 1, 0.0, x0, rng)?;
        tree.sigma = permutation(k, rng);
        Ok(tree)
    }

    fn grow<R: Rng + ?Sized>(
        &self,
        tree: &mut SpineTree,
        a: usize,
        b: usize,
        s0: f64,
        z0: f64,
        rng: &mut R,
    ) -> Result<()> {
        let n = tree.n;
        if a == b {
            tree.leaves[a] = self.step(z0, (tree.t - s0) * n, rng)?;
            return Ok(());
        }
        // deepest branch among leaves a..=b; ties go to the smallest index
        let mut m = a;
        for i in a + 1..b {
            if tree.u[i] > tree.u[m] {
                m = i;
            }
        }
        let s = tree.t - tree.u[m];
        let z = self.step(z0, (s - s0) * n, rng)?;
        tree.branches.push(BranchPoint {
            time: s,
            mark: z,
            split: m,
        });
        self.grow(tree, a, m, s, z, rng)?;
        self.grow(tree, m + 1, b, s, z, rng)
    }
}

/// `Delta = prod_B r(z_v) h(|v| N, z_v) prod_L 1 / h(t N, z_leaf)`.
pub fn spine_weight(tree: &SpineTree, sd: &SpectralData) -> f64 {
    let n = tree.n;
    let pot = &sd.potential;
    let mut w = 1.0;
    for b in &tree.branches {
        w *= pot.rate(b.mark) * sd.h(b.time * n, b.mark);
    }
    for &z in &tree.leaves {
        w /= sd.h(tree.t * n, z);
    }
    w
}

#[derive(Debug, Clone, Serialize)]
pub struct SpineEstimate {
    pub value: f64,
    pub se: f64,
    pub replicas: usize,
    pub ess: f64,
    /// Share of the total absolute contribution carried by the top 1%.
    pub top1_share: f64,
    pub heavy_tail: bool,
}

fn summarize(contribs: &[f64]) -> SpineEstimate {
    let ms = mean_se(contribs);
    let mut abs: Vec<f64> = contribs.iter().map(|c| c.abs()).collect();
    abs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let total: f64 = abs.iter().sum();
    let top = (abs.len() / 100).max(1);
    let top1_share = if total > 0.0 {
        abs[..top].iter().sum::<f64>() / total
    } else {
        0.0
    };
    SpineEstimate {
        value: ms.mean,
        se: ms.se,
        replicas: contribs.len(),
        ess: effective_sample_size(&abs),
        top1_share,
        heavy_tail: top1_share > 0.5,
    }
}

/// Per-replica samples: `(tree, contribution)` with `f` evaluated on each tree.
pub fn spine_replicas<F>(
    sampler: &SpineSampler,
    k: usize,
    t: f64,
    x0: f64,
    n: f64,
    replicas: usize,
    seed: u64,
    f: F,
) -> Result<Vec<(SpineTree, f64)>>
where
    F: Fn(&SpineTree) -> f64 + Sync,
{
    crate::parallel::install(|| {
        (0..replicas as u64)
            .into_par_iter()
            .map(|r| {
                let mut rng: Stream = stream(seed, r.wrapping_add(0x5B1E_0000_0000));
                let tree = sampler.sample(k, t, x0, n, &mut rng)?;
                let c = f(&tree);
                Ok((tree, c))
            })
            .collect()
    })
}

/// Many-to-few estimate of
/// `N^{-k} E_x[sum_{v_1 != .. != v_k} prod psi(d(v_i, v_j) / N) prod phi_i(x_{v_i})]`
/// at time `t N`: the mean of
/// `N^{-1} k! h(0, x) t^{k-1} Delta prod psi(U_{s_i s_j}) prod phi_i(z_{V_{s_i}})`.
#[allow(clippy::too_many_arguments)]
pub fn many_to_few_estimate(
    sampler: &SpineSampler,
    k: usize,
    t: f64,
    x0: f64,
    psi: &(dyn Fn(usize, usize, f64) -> f64 + Sync),
    phis: &[&(dyn Fn(f64) -> f64 + Sync)],
    replicas: usize,
    n: f64,
    seed: u64,
) -> Result<(SpineEstimate, Vec<(SpineTree, f64)>)> {
    if phis.len() != k {
        return Err(Error::InvalidParameter(format!("need {k} phi functions, got {}", phis.len())));
    }
    if replicas < 100 {
        return Err(Error::InvalidParameter(format!("replicas = {replicas} < 100")));
    }
    let sd = sampler.sd;
    let fact: f64 = (1..=k).map(|i| i as f64).product();
    let pref = fact * sd.h(0.0, x0) * t.powi(k as i32 - 1) / n;
    let rows = spine_replicas(sampler, k, t, x0, n, replicas, seed, |tree| {
        let mut v = pref * spine_weight(tree, sd);
        for i in 0..k {
            v *= phis[i](tree.leaf_mark(i));
            for j in i + 1..k {
                v *= psi(i, j, tree.u_labelled(i, j));
            }
        }
        v
    })?;
    let contribs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok((summarize(&contribs), rows))
}

/// Monte Carlo value of
/// `Q[Delta prod psi(U_{s_i s_j}) prod phi_i(z_{V_{s_i}}) h^inf(z_{V_{s_i}})]`,
/// which tends to `(Sigma^2/2)^{k-1} E[prod psi] prod int phi_i Pi^inf` as
/// `N` grows.
#[allow(clippy::too_many_arguments)]
pub fn limit_functional(
    sampler: &SpineSampler,
    k: usize,
    t: f64,
    x0: f64,
    psi: &(dyn Fn(usize, usize, f64) -> f64 + Sync),
    phis: &[&(dyn Fn(f64) -> f64 + Sync)],
    replicas: usize,
    n: f64,
    seed: u64,
) -> Result<(SpineEstimate, Vec<(SpineTree, f64)>)> {
    let sd = sampler.sd;
    let lp = sd.limit()?;
    if phis.len() != k {
        return Err(Error::InvalidParameter(format!("need {k} phi functions, got {}", phis.len())));
    }
    let rows = spine_replicas(sampler, k, t, x0, n, replicas, seed, |tree| {
        let mut v = spine_weight(tree, sd);
        for i in 0..k {
            let z = tree.leaf_mark(i);
            v *= phis[i](z) * lp.h(z);
            for j in i + 1..k {
                v *= psi(i, j, tree.u_labelled(i, j));
            }
        }
        v
    })?;
    let contribs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok((summarize(&contribs), rows))
}
