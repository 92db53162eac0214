//! Coalescent point process (CPP) genealogies and the limiting law of `k`
//! sampled leaves.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use crate::rng::{replica_seed, stream, Stream};
use crate::sampling::MarkLaw;
use crate::stats::{mean_se, MeanSe};

/// Law of the genealogy of `k` leaves: `theta` mixing variable, planar
/// coalescence depths, the leaf labelling and leaf marks.
#[derive(Debug, Clone, Serialize)]
pub struct HMatrix {
    pub k: usize,
    pub t: f64,
    pub theta: f64,
    /// `U_1, ..., U_{k-1}` in planar order.
    pub u: Vec<f64>,
    /// Planar position of labelled leaf `i`.
    pub position: Vec<usize>,
    pub marks: Vec<f64>,
}

/// `max(u[a..b])` for planar positions `a < b`.
pub fn planar_distance(u: &[f64], a: usize, b: usize) -> f64 {
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    u[a..b].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

impl HMatrix {
    /// `H_{i,j}` for labelled leaves.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        planar_distance(&self.u, self.position[i], self.position[j])
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Upper-triangle entries `H_{i,j}`, `i < j`, row by row.
    pub fn pairs(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for i in 0..self.k {
            for j in i + 1..self.k {
                v.push(self.get(i, j));
            }
        }
        v
    }
}

/// Draws `theta` with density `k theta^{k-1} / (1 + theta)^{k+1}`.
pub fn sample_theta<R: Rng + ?Sized>(k: usize, rng: &mut R) -> f64 {
    let v: f64 = rng.gen();
    let u = v.powf(1.0 / k as f64);
    u / (1.0 - u)
}

/// `P(U^theta <= s)` for `U^theta` on `[0, t]`.
pub fn u_theta_cdf(theta: f64, s: f64, t: f64) -> f64 {
    let p = (s / t).clamp(0.0, 1.0);
    (1.0 + theta) * p / (1.0 + theta * p)
}

/// CDF of the depth `H_{1,2}` of two sampled leaves at time `t`:
/// `E[F_theta(s)]` with `theta` of density `2 theta / (1 + theta)^3`, which
/// integrates to `2p (-ln p - (1 - p)) / (1 - p)^2`, `p = s / t`.
pub fn pair_depth_cdf(s: f64, t: f64) -> f64 {
    let p = (s / t).clamp(0.0, 1.0);
    if p == 0.0 {
        return 0.0;
    }
    let c = 1.0 - p;
    if c < 1e-4 {
        // series at p = 1
        return 1.0 - c / 3.0 - c * c / 6.0;
    }
    2.0 * p * (-p.ln() - c) / (c * c)
}

/// Uniform random permutation by Fisher-Yates.
pub fn permutation<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..k).collect();
    p.shuffle(rng);
    p
}

/// Samples the limiting genealogy of `k` uniformly chosen leaves at time `t`.
pub fn sample_h<R: Rng + ?Sized>(k: usize, t: f64, marks: Option<&MarkLaw>, rng: &mut R) -> Result<HMatrix> {
    if k == 0 || !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("sample_h needs k >= 1, t > 0 (k={k}, t={t})")));
    }
    let theta = sample_theta(k, rng);
    let u = (0..k.saturating_sub(1))
        .map(|_| {
            let v: f64 = rng.gen();
            t * v / (1.0 + theta * (1.0 - v))
        })
        .collect();
    let position = permutation(k, rng);
    let marks = match marks {
        Some(m) => (0..k).map(|_| m.sample(rng)).collect(),
        None => Vec::new(),
    };
    Ok(HMatrix {
        k,
        t,
        theta,
        u,
        position,
        marks,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Atom {
    pub y: f64,
    pub height: f64,
}

/// CPP of depth `t` on `[0, Y]`, `Y ~ Exp(mean t)`, atoms of height in
/// `[t_floor, t)` only.
#[derive(Debug, Clone, Serialize)]
pub struct CppSample {
    pub t: f64,
    pub t_floor: f64,
    pub total: f64,
    pub atoms: Vec<Atom>,
}

impl CppSample {
    /// Coalescence depth between positions `a` and `b`; `None` when no
    /// resolved atom separates them.
    pub fn distance(&self, a: f64, b: f64) -> Option<f64> {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        let i = self.atoms.partition_point(|at| at.y <= a);
        let j = self.atoms.partition_point(|at| at.y < b);
        self.atoms[i..j]
            .iter()
            .map(|at| at.height)
            .fold(None, |m: Option<f64>, h| Some(m.map_or(h, |m| m.max(h))))
    }

    /// Picks `k` uniform leaves. Returns planar positions, the pairwise
    /// depths (`0` when unresolved) and whether every pair was resolved.
    pub fn sample_leaves<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> (Vec<f64>, Vec<Vec<f64>>, bool) {
        let ys: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * self.total).collect();
        let mut resolved = true;
        let mut d = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                let v = match self.distance(ys[i], ys[j]) {
                    Some(h) => h,
                    None => {
                        resolved = false;
                        0.0
                    }
                };
                d[i][j] = v;
                d[j][i] = v;
            }
        }
        (ys, d, resolved)
    }

    /// As [`Self::sample_leaves`], redrawing until all pairs are resolved.
    pub fn sample_resolved_leaves<R: Rng + ?Sized>(
        &self,
        k: usize,
        rng: &mut R,
        max_tries: usize,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        for _ in 0..max_tries {
            let (ys, d, ok) = self.sample_leaves(k, rng);
            if ok {
                return Ok((ys, d));
            }
        }
        Err(Error::Numerical(format!(
            "no resolved leaf sample in {max_tries} tries; lower t_floor"
        )))
    }
}

/// Samples a CPP of depth `t`.
pub fn sample_cpp<R: Rng + ?Sized>(t: f64, t_floor: f64, atom_cap: usize, rng: &mut R) -> Result<CppSample> {
    if !(t > 0.0 && t_floor > 0.0 && t_floor < t) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < t_floor < t (t={t}, t_floor={t_floor})"
        )));
    }
    let total = Exp::new(1.0 / t).unwrap().sample(rng);
    let rate = 1.0 / t_floor - 1.0 / t;
    let mean = rate * total;
    let n = if mean > 0.0 {
        Poisson::new(mean).unwrap().sample(rng) as usize
    } else {
        0
    };
    if n > atom_cap {
        return Err(Error::Numerical(format!(
            "CPP needs {n} atoms, above the cap {atom_cap}; raise t_floor"
        )));
    }
    let mut atoms: Vec<Atom> = (0..n)
        .map(|_| {
            let v: f64 = rng.gen();
            Atom {
                y: rng.gen::<f64>() * total,
                height: 1.0 / (1.0 / t_floor - v * rate),
            }
        })
        .collect();
    atoms.sort_by(|a, b| a.y.partial_cmp(&b.y).unwrap());
    Ok(CppSample {
        t,
        t_floor,
        total,
        atoms,
    })
}

/// Product of `psi(i, j, d_ij)` over pairs `i < j` of a symmetric matrix.
pub fn pair_product<F: Fn(usize, usize, f64) -> f64>(d: &[Vec<f64>], psi: &F) -> f64 {
    let k = d.len();
    let mut p = 1.0;
    for i in 0..k {
        for j in i + 1..k {
            p *= psi(i, j, d[i][j]);
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentValue {
    pub value: f64,
    pub se: Option<f64>,
    pub exact: bool,
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn all_permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// `k! t^k E[prod_{i<j} psi(U_{s_i, s_j})] prod_i int phi_i dm`, the
/// `k`-th moment functional of the CPP with mark measure `m`.
///
/// `phi_masses[i]` is `int phi_i dm`. Up to `k = 4` the expectation is
/// computed by tensor Gauss-Legendre quadrature over the depths and an exact
/// average over labellings; above, by Monte Carlo with `mc_samples` draws.
pub fn cpp_moment<F: Fn(usize, usize, f64) -> f64>(
    k: usize,
    t: f64,
    psi: &F,
    phi_masses: &[f64],
    mc_samples: usize,
    seed: u64,
) -> Result<MomentValue> {
    if k == 0 || phi_masses.len() != k {
        return Err(Error::InvalidParameter(format!(
            "cpp_moment needs k >= 1 and k mark masses (k={k}, got {})",
            phi_masses.len()
        )));
    }
    let pref = factorial(k) * t.powi(k as i32) * phi_masses.iter().product::<f64>();
    if k == 1 {
        return Ok(MomentValue {
            value: pref,
            se: None,
            exact: true,
        });
    }
    let eval = |u: &[f64], perm: &[usize]| {
        let mut p = 1.0;
        for i in 0..k {
            for j in i + 1..k {
                p *= psi(i, j, planar_distance(u, perm[i], perm[j]));
            }
        }
        p
    };
    if k <= 4 {
        let panels = match k {
            2 => 64,
            3 => 24,
            _ => 8,
        };
        let (gx, gw) = gauss_legendre(8);
        let h = t / panels as f64;
        let mut nodes = Vec::with_capacity(panels * 8);
        let mut weights = Vec::with_capacity(panels * 8);
        for p in 0..panels {
            let c = (p as f64 + 0.5) * h;
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push(c + 0.5 * h * x);
                weights.push(0.5 * h * w / t);
            }
        }
        let perms = all_permutations(k);
        let m = nodes.len();
        let dims = k - 1;
        let mut idx = vec![0usize; dims];
        let mut u = vec![0.0; dims];
        let mut total = 0.0;
        loop {
            let mut w = 1.0;
            for d in 0..dims {
                u[d] = nodes[idx[d]];
                w *= weights[idx[d]];
            }
            let s: f64 = perms.iter().map(|p| eval(&u, p)).sum();
            total += w * s / perms.len() as f64;
            let mut d = 0;
            loop {
                if d == dims {
                    return Ok(MomentValue {
                        value: pref * total,
                        se: None,
                        exact: true,
                    });
                }
                idx[d] += 1;
                if idx[d] < m {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }
    let mut vals = Vec::with_capacity(mc_samples);
    let mut rng = stream(seed, 0xC0FFEE);
    let mut u = vec![0.0; k - 1];
    for _ in 0..mc_samples {
        for x in u.iter_mut() {
            *x = rng.gen::<f64>() * t;
        }
        let perm = permutation(k, &mut rng);
        vals.push(eval(&u, &perm));
    }
    let ms = mean_se(&vals);
    Ok(MomentValue {
        value: pref * ms.mean,
        se: Some(pref * ms.se),
        exact: false,
    })
}

/// Monte Carlo estimate of the same moment from `sample_cpp`:
/// `E[Y^k prod psi(d)] |m|^k`-weighted, using uniform leaves.
pub fn cpp_moment_mc<F: Fn(usize, usize, f64) -> f64>(
    k: usize,
    t: f64,
    t_floor: f64,
    psi: &F,
    phi_masses: &[f64],
    samples: usize,
    seed: u64,
) -> Result<MeanSe> {
    let mut vals = Vec::with_capacity(samples);
    let mass: f64 = phi_masses.iter().product();
    for r in 0..samples {
        let mut rng: Stream = stream(replica_seed(seed, r as u64), 0);
        let cpp = sample_cpp(t, t_floor, 50_000_000, &mut rng)?;
        let (_, d, _) = cpp.sample_leaves(k, &mut rng);
        vals.push(cpp.total.powi(k as i32) * pair_product(&d, psi) * mass);
    }
    Ok(mean_se(&vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn theta_law() {
        let mut rng = stream(1, 1);
        let n = 200_000;
        let k = 3;
        let below = (0..n).filter(|_| sample_theta(k, &mut rng) <= 1.0).count() as f64 / n as f64;
        // P(theta <= 1) = (1/2)^k
        assert!((below - 0.125).abs() < 0.003);
    }

    #[test]
    fn u_theta_law() {
        let mut rng = stream(2, 1);
        let theta = 4.0;
        let n = 200_000;
        let mut c = 0;
        for _ in 0..n {
            let v: f64 = rng.gen();
            if 2.0 * v / (1.0 + theta * (1.0 - v)) <= 0.5 {
                c += 1;
            }
        }
        let want = u_theta_cdf(theta, 0.5, 2.0);
        assert!((c as f64 / n as f64 - want).abs() < 0.004);
    }

    #[test]
    fn planar_distances() {
        let u = [0.3, 0.9, 0.1];
        assert_eq!(planar_distance(&u, 0, 1), 0.3);
        assert_eq!(planar_distance(&u, 0, 3), 0.9);
        assert_eq!(planar_distance(&u, 3, 2), 0.1);
    }

    #[test]
    fn permutations_count() {
        assert_eq!(all_permutations(4).len(), 24);
    }
}
