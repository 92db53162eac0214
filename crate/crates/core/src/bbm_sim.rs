//! Direct simulation of the dyadic BBM with drift `-mu`, branching rate
//! `r(x)`, killed at 0 and absorbed at an optional cutoff `L`.
//!
//! Each particle path is advanced with exact Gaussian increments; killing
//! between grid points is detected with the Brownian-bridge crossing
//! probability `exp(-2 a b / dt)`. Branching uses thinning at `max r`.
//! The forest is explored depth first, left child first, and every particle
//! draws from its own stream keyed by its position in the genealogy.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::rng::{child_key, replica_seed, stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtPolicy {
    /// Step used within `margin` of a boundary.
    pub near: f64,
    /// Step used elsewhere.
    pub far: f64,
    pub margin: f64,
}

impl Default for DtPolicy {
    fn default() -> Self {
        DtPolicy {
            near: 0.01,
            far: 0.1,
            margin: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub potential: Potential,
    pub mu: f64,
    pub horizon: f64,
    /// Upper absorbing boundary `L`; `None` for the half line.
    #[serde(default)]
    pub cutoff: Option<f64>,
    pub x0: f64,
    #[serde(default)]
    pub dt: DtPolicy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub max_particles: usize,
    /// Escape thresholds as fractions of the cutoff; the first crossing of
    /// `gamma * L` by each lineage is counted.
    #[serde(default)]
    pub gamma_levels: Vec<f64>,
    /// Switches branching off (pure killed diffusion).
    #[serde(default)]
    pub no_branching: bool,
    /// Times at which positions of living particles are recorded.
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

fn default_cap() -> usize {
    20_000_000
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.potential.validate()?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon {}", self.horizon)));
        }
        if !self.mu.is_finite() {
            return Err(Error::Config("mu must be finite".into()));
        }
        if let Some(l) = self.cutoff {
            if !(l > 0.0) || !(self.x0 < l) {
                return Err(Error::Config(format!("cutoff {l} must exceed x0 = {}", self.x0)));
            }
        }
        if !(self.x0 > 0.0) {
            return Err(Error::Config(format!("x0 = {} must be positive", self.x0)));
        }
        if !(self.dt.near > 0.0 && self.dt.far >= self.dt.near) {
            return Err(Error::Config("dt policy needs 0 < near <= far".into()));
        }
        if self.gamma_levels.len() > 64 {
            return Err(Error::Config("at most 64 escape levels".into()));
        }
        if !self.gamma_levels.is_empty() && self.cutoff.is_none() {
            return Err(Error::Config("gamma_levels need a cutoff".into()));
        }
        if self.snapshots.iter().any(|&s| !(s >= 0.0 && s <= self.horizon)) {
            return Err(Error::Config("snapshots must lie in [0, horizon]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    Branch,
    KilledAtZero,
    Cutoff,
    Alive,
    Capped,
}

impl Cause {
    pub fn code(&self) -> &'static str {
        match self {
            Cause::Branch => "branch",
            Cause::KilledAtZero => "killed0",
            Cause::Cutoff => "cutoff",
            Cause::Alive => "alive",
            Cause::Capped => "capped",
        }
    }
}

pub const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Node {
    pub parent: u32,
    pub depth: u32,
    pub birth: f64,
    pub death: f64,
    pub x_death: f64,
    pub cause: Cause,
    pub planar_bit: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnapshotRecord {
    pub node: u32,
    pub snapshot: u32,
    pub x: f64,
}

/// Full particle history of one replica; node ids are in depth-first
/// (planar) preorder.
#[derive(Debug, Clone, Serialize)]
pub struct GenealogyForest {
    pub seed: u64,
    pub horizon: f64,
    pub nodes: Vec<Node>,
    pub snapshots: Vec<f64>,
    pub snapshot_records: Vec<SnapshotRecord>,
    /// First-crossing counts per escape level.
    pub escapes: Vec<u64>,
    pub capped: bool,
}

impl GenealogyForest {
    /// Ids and positions of particles alive at the horizon, planar order.
    pub fn alive(&self) -> Vec<(u32, f64)> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.cause == Cause::Alive)
            .map(|(i, n)| (i as u32, n.x_death))
            .collect()
    }

    pub fn population(&self) -> usize {
        self.nodes.iter().filter(|n| n.cause == Cause::Alive).count()
    }

    pub fn survived(&self) -> bool {
        self.population() > 0
    }

    /// Particles alive at `t`, which must be the horizon or a snapshot time.
    pub fn alive_at(&self, t: f64) -> Result<Vec<(u32, f64)>> {
        if t == self.horizon {
            return Ok(self.alive());
        }
        let Some(s) = self.snapshots.iter().position(|&s| s == t) else {
            return Err(Error::InvalidParameter(format!(
                "positions at t = {t} were not recorded"
            )));
        };
        let mut v: Vec<(u32, f64)> = self
            .snapshot_records
            .iter()
            .filter(|r| r.snapshot as usize == s)
            .map(|r| (r.node, r.x))
            .collect();
        v.sort_by_key(|p| p.0);
        Ok(v)
    }

    /// Time of the most recent common ancestor of two nodes.
    pub fn mrca_time(&self, a: u32, b: u32) -> f64 {
        let (mut a, mut b) = (a, b);
        while self.nodes[a as usize].depth > self.nodes[b as usize].depth {
            a = self.nodes[a as usize].parent;
        }
        while self.nodes[b as usize].depth > self.nodes[a as usize].depth {
            b = self.nodes[b as usize].parent;
        }
        while a != b {
            a = self.nodes[a as usize].parent;
            b = self.nodes[b as usize].parent;
        }
        self.nodes[a as usize].death
    }

    /// CSV lines `id,parent_id,birth,death,cause,planar_bit,x_at_death`.
    pub fn to_csv_rows(&self) -> Vec<String> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let parent = if n.parent == NO_PARENT {
                    String::from("-1")
                } else {
                    n.parent.to_string()
                };
                format!(
                    "{},{},{},{},{},{},{}",
                    i,
                    parent,
                    n.birth,
                    n.death,
                    n.cause.code(),
                    n.planar_bit,
                    n.x_death
                )
            })
            .collect()
    }
}

struct Work {
    parent: u32,
    depth: u32,
    planar_bit: u8,
    key: u64,
    t: f64,
    x: f64,
    crossed: u64,
}

/// Probability that a Brownian bridge over time `dt` between two points at
/// distances `a, b > 0` from a barrier touches it.
#[inline]
fn bridge_hit(a: f64, b: f64, dt: f64) -> f64 {
    let e = 2.0 * a * b / dt;
    if e > 40.0 {
        0.0
    } else {
        (-e).exp()
    }
}

#[inline]
fn exp_wait<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / rate
}

/// Runs one replica with master seed `config.seed`.
pub fn simulate(config: &SimConfig) -> Result<GenealogyForest> {
    config.validate()?;
    let pot = &config.potential;
    let r_max = pot.max_rate();
    let levels: Vec<f64> = config
        .gamma_levels
        .iter()
        .map(|g| g * config.cutoff.unwrap_or(f64::INFINITY))
        .collect();
    let branching = !config.no_branching;
    let mu = config.mu;
    let horizon = config.horizon;
    let l = config.cutoff.unwrap_or(f64::INFINITY);
    let dt = config.dt;
    let mut snaps: Vec<(f64, usize)> = config
        .snapshots
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, s)| (s, i))
        .collect();
    snaps.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut forest = GenealogyForest {
        seed: config.seed,
        horizon,
        nodes: Vec::new(),
        snapshots: config.snapshots.clone(),
        snapshot_records: Vec::new(),
        escapes: vec![0; levels.len()],
        capped: false,
    };
    let mut stack = vec![Work {
        parent: NO_PARENT,
        depth: 0,
        planar_bit: 0,
        key: 1,
        t: 0.0,
        x: config.x0,
        crossed: 0,
    }];
    while let Some(w) = stack.pop() {
        if forest.nodes.len() >= config.max_particles {
            forest.capped = true;
            break;
        }
        let id = forest.nodes.len() as u32;
        let mut rng: Stream = stream(config.seed, w.key);
        let mut t = w.t;
        let mut x = w.x;
        let mut crossed = w.crossed;
        let birth = t;
        // snapshots strictly after birth, or at birth for the root
        let mut si = snaps.partition_point(|s| s.0 < birth || (s.0 == birth && w.parent != NO_PARENT));
        let mut next_candidate = if branching {
            t + exp_wait(&mut rng, r_max)
        } else {
            f64::INFINITY
        };
        let (death, x_death, cause) = 'life: loop {
            while si < snaps.len() && snaps[si].0 <= t {
                forest.snapshot_records.push(SnapshotRecord {
                    node: id,
                    snapshot: snaps[si].1 as u32,
                    x,
                });
                si += 1;
            }
            let next_snap = if si < snaps.len() { snaps[si].0 } else { f64::INFINITY };
            let stop = next_candidate.min(horizon).min(next_snap);
            while t < stop {
                let near = x < dt.margin || l - x < dt.margin;
                let h = (if near { dt.near } else { dt.far }).min(stop - t);
                let z: f64 = StandardNormal.sample(&mut rng);
                let y = x - mu * h + h.sqrt() * z;
                let t_new = if stop - t <= h { stop } else { t + h };
                if y <= 0.0 {
                    break 'life (t_new, 0.0, Cause::KilledAtZero);
                }
                let p0 = bridge_hit(x, y, h);
                if p0 > 0.0 && rng.gen::<f64>() < p0 {
                    break 'life (t_new, 0.0, Cause::KilledAtZero);
                }
                for (i, &lev) in levels.iter().enumerate() {
                    let bit = 1u64 << i;
                    if crossed & bit != 0 {
                        continue;
                    }
                    let hit = y >= lev || {
                        let p = bridge_hit(lev - x, lev - y, h);
                        p > 0.0 && rng.gen::<f64>() < p
                    };
                    if hit {
                        crossed |= bit;
                        forest.escapes[i] += 1;
                    }
                }
                if y >= l {
                    break 'life (t_new, l, Cause::Cutoff);
                }
                if l.is_finite() {
                    let pl = bridge_hit(l - x, l - y, h);
                    if pl > 0.0 && rng.gen::<f64>() < pl {
                        break 'life (t_new, l, Cause::Cutoff);
                    }
                }
                x = y;
                t = t_new;
            }
            if t >= horizon {
                while si < snaps.len() && snaps[si].0 <= t {
                    forest.snapshot_records.push(SnapshotRecord {
                        node: id,
                        snapshot: snaps[si].1 as u32,
                        x,
                    });
                    si += 1;
                }
                break 'life (horizon, x, Cause::Alive);
            }
            if t >= next_candidate {
                if rng.gen::<f64>() * r_max < pot.rate(x) {
                    break 'life (t, x, Cause::Branch);
                }
                next_candidate = t + exp_wait(&mut rng, r_max);
            }
        };
        forest.nodes.push(Node {
            parent: w.parent,
            depth: w.depth,
            birth,
            death,
            x_death,
            cause,
            planar_bit: w.planar_bit,
        });
        if cause == Cause::Branch {
            for bit in [1u8, 0u8] {
                stack.push(Work {
                    parent: id,
                    depth: w.depth + 1,
                    planar_bit: bit,
                    key: child_key(w.key, bit as u64),
                    t: death,
                    x: x_death,
                    crossed,
                });
            }
        }
    }
    if forest.capped {
        // particles left unexplored are recorded as capped leaves
        for w in stack.drain(..).rev() {
            forest.nodes.push(Node {
                parent: w.parent,
                depth: w.depth,
                birth: w.t,
                death: w.t,
                x_death: w.x,
                cause: Cause::Capped,
                planar_bit: w.planar_bit,
            });
        }
    }
    Ok(forest)
}

/// Replica `r` of a batch: the master seed is replaced by the derived
/// replica seed.
pub fn simulate_replica(config: &SimConfig, r: u64) -> Result<GenealogyForest> {
    let mut c = config.clone();
    c.seed = replica_seed(config.seed, r);
    simulate(&c)
}

/// Runs `n` replicas in parallel and maps each forest through `f`; the
/// output is ordered by replica index.
pub fn run_replicas<T, F>(config: &SimConfig, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &GenealogyForest) -> T + Sync,
{
    config.validate()?;
    crate::parallel::install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|r| simulate_replica(config, r).map(|forest| f(r, &forest)))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaStats {
    pub replica: u64,
    pub survived: bool,
    pub z: usize,
    pub escapes: Vec<u64>,
    pub capped: bool,
}

pub fn replica_stats(r: u64, f: &GenealogyForest) -> ReplicaStats {
    let z = f.population();
    ReplicaStats {
        replica: r,
        survived: z > 0,
        z,
        escapes: f.escapes.clone(),
        capped: f.capped,
    }
}

/// Alive population at time `t` as a marked metric measure space: leaves in
/// planar order, marks, and genealogical distances `t - |u ^ v|`, all
/// rescaled by `n` (mass `Z_t / n`, distances `/ n`).
#[derive(Debug, Clone)]
pub struct MarkedSample {
    pub t: f64,
    pub rescale: f64,
    pub leaves: Vec<u32>,
    pub marks: Vec<f64>,
    /// `splits[i]` is the MRCA time of leaves `i` and `i + 1`.
    splits: Vec<f64>,
    table: Vec<Vec<f64>>,
}

impl MarkedSample {
    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    /// MRCA times of consecutive leaves.
    pub fn split_times(&self) -> &[f64] {
        &self.splits
    }

    pub fn total_mass(&self) -> f64 {
        self.leaves.len() as f64 / self.rescale
    }

    fn range_min(&self, i: usize, j: usize) -> f64 {
        // min of splits[i..j], j > i
        let len = j - i;
        let lvl = (usize::BITS - 1 - len.leading_zeros()) as usize;
        self.table[lvl][i].min(self.table[lvl][j - (1 << lvl)])
    }

    /// Genealogical distance between leaves `i` and `j` (indices into
    /// `leaves`). Planar order makes the MRCA of `i < j` the oldest of the
    /// consecutive MRCAs in between.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        (self.t - self.range_min(a, b)) / self.rescale
    }

    pub fn distance_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n).map(|i| (0..n).map(|j| self.distance(i, j)).collect()).collect()
    }
}

/// Extracts the population alive at `t` (horizon or snapshot time).
pub fn extract_mmm(forest: &GenealogyForest, t: f64, rescale_n: Option<f64>) -> Result<MarkedSample> {
    if t > forest.horizon {
        return Err(Error::InvalidParameter(format!(
            "t = {t} beyond horizon {}",
            forest.horizon
        )));
    }
    let n = rescale_n.unwrap_or(1.0);
    if !(n > 0.0) {
        return Err(Error::InvalidParameter(format!("rescale N = {n}")));
    }
    let alive = forest.alive_at(t)?;
    let leaves: Vec<u32> = alive.iter().map(|p| p.0).collect();
    let marks: Vec<f64> = alive.iter().map(|p| p.1).collect();
    let splits: Vec<f64> = leaves.windows(2).map(|w| forest.mrca_time(w[0], w[1])).collect();
    let mut table = vec![splits.clone()];
    let mut w = 1;
    while 2 * w <= splits.len() {
        let prev = table.last().unwrap();
        let next: Vec<f64> = (0..=splits.len() - 2 * w)
            .map(|i| prev[i].min(prev[i + w]))
            .collect();
        table.push(next);
        w *= 2;
    }
    Ok(MarkedSample {
        t,
        rescale: n,
        leaves,
        marks,
        splits,
        table,
    })
}

/// `k` leaves drawn uniformly with replacement: their distance matrix,
/// marks and indices.
pub fn sample_uniform_k<R: Rng + ?Sized>(
    sample: &MarkedSample,
    k: usize,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<usize>)> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    if sample.is_empty() {
        return Err(Error::InvalidParameter("empty sample".into()));
    }
    let idx: Vec<usize> = (0..k).map(|_| rng.gen_range(0..sample.len())).collect();
    let d = idx
        .iter()
        .map(|&i| idx.iter().map(|&j| sample.distance(i, j)).collect())
        .collect();
    let marks = idx.iter().map(|&i| sample.marks[i]).collect();
    Ok((d, marks, idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolyValue {
    pub value: f64,
    pub se: f64,
    pub exact: bool,
}

/// Tuple budget below which polynomials are summed exhaustively.
pub const EXHAUSTIVE_LIMIT: f64 = 2.0e7;

/// Polynomial `∫ prod_{i<j} psi(i, j, d(v_i, v_j)) prod_i phi_i(x_i) nu^k`,
/// optionally restricted to pairwise distinct leaves. `k <= 3` is summed
/// exactly when the tuple count allows; otherwise `mc_samples` uniform
/// tuples are drawn from `rng`.
pub fn evaluate_polynomial<R: Rng + ?Sized>(
    sample: &MarkedSample,
    psi: &dyn Fn(usize, usize, f64) -> f64,
    phis: &[&dyn Fn(f64) -> f64],
    distinct: bool,
    mc_samples: usize,
    rng: &mut R,
) -> Result<PolyValue> {
    let k = phis.len();
    if k == 0 {
        return Err(Error::InvalidParameter("need at least one phi".into()));
    }
    let n = sample.len();
    let exact0 = PolyValue {
        value: 0.0,
        se: 0.0,
        exact: true,
    };
    if n == 0 || (distinct && n < k) {
        return Ok(exact0);
    }
    let weight = (1.0 / sample.rescale).powi(k as i32);
    let term = |idx: &[usize]| -> f64 {
        if distinct {
            for a in 0..k {
                for b in a + 1..k {
                    if idx[a] == idx[b] {
                        return 0.0;
                    }
                }
            }
        }
        let mut v = 1.0;
        for (a, phi) in phis.iter().enumerate() {
            v *= phi(sample.marks[idx[a]]);
            if v == 0.0 {
                return 0.0;
            }
        }
        for a in 0..k {
            for b in a + 1..k {
                v *= psi(a, b, sample.distance(idx[a], idx[b]));
            }
        }
        v
    };
    if k <= 3 && (n as f64).powi(k as i32) <= EXHAUSTIVE_LIMIT {
        let mut idx = vec![0usize; k];
        let mut s = 0.0;
        'outer: loop {
            s += term(&idx);
            for a in (0..k).rev() {
                idx[a] += 1;
                if idx[a] < n {
                    continue 'outer;
                }
                idx[a] = 0;
            }
            break;
        }
        return Ok(PolyValue {
            value: s * weight,
            se: 0.0,
            exact: true,
        });
    }
    if mc_samples < 2 {
        return Err(Error::InvalidParameter("Monte Carlo path needs samples".into()));
    }
    let scale = (n as f64).powi(k as i32) * weight;
    let mut idx = vec![0usize; k];
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..mc_samples {
        for i in idx.iter_mut() {
            *i = rng.gen_range(0..n);
        }
        let v = term(&idx);
        s1 += v;
        s2 += v * v;
    }
    let m = mc_samples as f64;
    let mean = s1 / m;
    let var = ((s2 / m - mean * mean) * m / (m - 1.0)).max(0.0);
    Ok(PolyValue {
        value: scale * mean,
        se: scale * (var / m).sqrt(),
        exact: false,
    })
}
