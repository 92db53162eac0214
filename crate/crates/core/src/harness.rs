//! Config-driven experiment runner: Yaglom, genealogy, Kolmogorov and
//! spine-limit checks with stamped, reproducible outputs.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bbm_sim::{extract_mmm, run_replicas, sample_uniform_k, DtPolicy, MarkedSample, SimConfig};
use crate::cpp::{pair_depth_cdf, sample_cpp, sample_h};
use crate::error::{Error, Result};
use crate::fkpp::{kolmogorov_check, FkppConfig};
use crate::kspine::{limit_functional, SpineSampler};
use crate::potential::Potential;
use crate::quadrature::gauss_panels;
use crate::rng::{mix, stream};
use crate::sampling::MarkLaw;
use crate::spectral::{harmonic_data, limit_top_eigenvalue, Regime, SpectralData, SpectralOptions};
use crate::stats::{chi_square, histogram, ks_one_sample, mean_se, KsResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Yaglom,
    Genealogy,
    Kolmogorov,
    SpineLimit,
}

/// Acceptance thresholds. All gates read their bounds from here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub min_survivors: usize,
    pub yaglom_mean_tol: f64,
    pub moment_band: [f64; 2],
    pub ks_p: f64,
    pub genealogy_ks_max: f64,
    pub chi2_p: f64,
    pub mark_bins: usize,
    pub checkpoint_z: f64,
    pub kolmogorov_tol: f64,
    pub mc_z: f64,
    pub sweep_spread: f64,
    pub grid_tol: f64,
    pub spine_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            min_survivors: 300,
            yaglom_mean_tol: 0.15,
            moment_band: [0.85, 1.15],
            ks_p: 0.01,
            genealogy_ks_max: 0.08,
            chi2_p: 0.01,
            mark_bins: 20,
            checkpoint_z: 3.0,
            kolmogorov_tol: 0.2,
            mc_z: 3.0,
            sweep_spread: 0.05,
            grid_tol: 0.01,
            spine_tol: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenealogyOptions {
    /// Leaves sampled per surviving replica; the pair `(0, 1)` is pooled.
    pub k: usize,
    /// Draws per CPP construction for the `F(t/2)` checkpoint.
    pub cpp_replicas: usize,
    pub cpp_floor: f64,
}

impl Default for GenealogyOptions {
    fn default() -> Self {
        GenealogyOptions {
            k: 2,
            cpp_replicas: 40_000,
            cpp_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KolmogorovOptions {
    pub n_list: Vec<f64>,
    /// Compare the direct-simulation survival frequency at `n`.
    pub monte_carlo: bool,
    /// Re-solve at `n` with `dx` and `dt` halved.
    pub grid_check: bool,
    pub dx: f64,
    pub dt: f64,
}

impl Default for KolmogorovOptions {
    fn default() -> Self {
        KolmogorovOptions {
            n_list: vec![100.0, 200.0, 400.0],
            monte_carlo: true,
            grid_check: true,
            // the spatial error of N u(tN, x) grows like tN dx^2
            dx: 2.5e-3,
            dt: 5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpineOptions {
    pub n: f64,
    pub replicas: usize,
}

impl Default for SpineOptions {
    fn default() -> Self {
        SpineOptions {
            n: 1000.0,
            replicas: 20_000,
        }
    }
}

/// One experiment, read from a JSON document. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub name: String,
    /// `zero`, `step:<b>`, `bump:<a>` or `table:<file>`.
    pub potential: String,
    pub n: f64,
    pub t: f64,
    pub x0: f64,
    pub replicas: usize,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub spectral: SpectralOptions,
    pub sim_dt: DtPolicy,
    pub genealogy: GenealogyOptions,
    pub kolmogorov: KolmogorovOptions,
    pub spine: SpineOptions,
    pub thresholds: Thresholds,
    /// Output directory.
    pub out: Option<String>,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            name: "acceptance".into(),
            potential: "step:10".into(),
            n: 200.0,
            t: 1.0,
            x0: 2.0,
            replicas: 160_000,
            seed: 1,
            checks: vec![Check::Yaglom, Check::Genealogy, Check::Kolmogorov, Check::SpineLimit],
            spectral: SpectralOptions::default(),
            sim_dt: DtPolicy::default(),
            genealogy: GenealogyOptions::default(),
            kolmogorov: KolmogorovOptions::default(),
            spine: SpineOptions::default(),
            thresholds: Thresholds::default(),
            out: None,
        }
    }
}

impl Experiment {
    pub fn from_json(text: &str) -> Result<Self> {
        let e: Experiment = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        e.validate()?;
        Ok(e)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        Potential::parse_spec(&self.potential).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.n > 1.0 && self.t > 0.0 && self.x0 > 0.0) {
            return Err(Error::Config(format!("need n > 1, t > 0, x0 > 0 (n={}, t={}, x0={})", self.n, self.t, self.x0)));
        }
        if self.genealogy.k < 2 {
            return Err(Error::Config("genealogy.k must be at least 2".into()));
        }
        if self.kolmogorov.n_list.iter().any(|&n| !(n > 1.0)) {
            return Err(Error::Config("kolmogorov.n_list entries must exceed 1".into()));
        }
        if self.thresholds.mark_bins < 2 {
            return Err(Error::Config("thresholds.mark_bins must be at least 2".into()));
        }
        Ok(())
    }

    pub fn potential(&self) -> Result<Potential> {
        Potential::parse_spec(&self.potential)
    }

    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("experiment serialises");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn stamp(&self) -> Stamp {
        Stamp {
            version: VERSION.into(),
            seed: self.seed,
            config_sha256: self.config_hash(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stamp {
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
}

impl Stamp {
    pub fn header(&self) -> String {
        format!(
            "# pushedfront {} seed={} config_sha256={}\n",
            self.version, self.seed, self.config_sha256
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub passed: bool,
}

impl Gate {
    fn new(name: &str, value: f64, bound: String, passed: bool) -> Self {
        Gate {
            name: name.into(),
            value,
            bound,
            passed,
        }
    }
    fn at_most(name: &str, value: f64, max: f64) -> Self {
        Self::new(name, value, format!("<= {max}"), value <= max)
    }
    fn at_least(name: &str, value: f64, min: f64) -> Self {
        Self::new(name, value, format!(">= {min}"), value >= min)
    }
    fn p_above(name: &str, p: f64, min: f64) -> Self {
        Self::new(name, p, format!("> {min}"), p > min)
    }
}

/// Result of one replica of the shared survival batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaOutcome {
    pub replica: u64,
    pub z: usize,
    pub capped: bool,
    /// Rescaled distance `d(v_0, v_1) / N` of two distinct uniform leaves.
    pub pair_distance: Option<f64>,
    /// Marks of the sampled leaves.
    pub marks: Vec<f64>,
    /// Ultrametric violations among three distinct uniform leaves.
    pub triangle_violations: Option<usize>,
}

/// Direct simulation of `replicas` copies of the BBM on `[0, L(N)]` up to
/// time `tN`, reduced to per-replica outcomes.
#[derive(Debug, Clone, Serialize)]
pub struct SurvivalBatch {
    pub n: f64,
    pub t: f64,
    pub x0: f64,
    pub l: f64,
    pub seed: u64,
    pub outcomes: Vec<ReplicaOutcome>,
}

impl SurvivalBatch {
    pub fn replicas(&self) -> usize {
        self.outcomes.len()
    }
    pub fn survivors(&self) -> usize {
        self.outcomes.iter().filter(|o| o.z > 0).count()
    }
    pub fn capped(&self) -> usize {
        self.outcomes.iter().filter(|o| o.capped).count()
    }
}

fn distinct_leaves<R: Rng>(s: &MarkedSample, k: usize, rng: &mut R) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    loop {
        let (d, marks, idx) = sample_uniform_k(s, k, rng)?;
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() == k {
            return Ok((d, marks));
        }
    }
}

fn triangle_violations(d: &[Vec<f64>]) -> usize {
    let mut bad = 0;
    for (i, j, l) in [(0, 1, 2), (0, 2, 1), (1, 2, 0)] {
        if d[i][j] > d[i][l].max(d[j][l]) {
            bad += 1;
        }
    }
    bad
}

/// Runs the shared batch. `sd` must live on `[0, L(N)]`.
#[allow(clippy::too_many_arguments)]
pub fn run_survival_batch(
    sd: &SpectralData,
    n: f64,
    t: f64,
    x0: f64,
    replicas: usize,
    seed: u64,
    dt: DtPolicy,
    k: usize,
) -> Result<SurvivalBatch> {
    require_pushed(sd.regime)?;
    let horizon = t * n;
    let cfg = SimConfig {
        potential: sd.potential.clone(),
        mu: sd.mu,
        horizon,
        cutoff: Some(sd.l),
        x0,
        dt,
        seed,
        max_particles: 20_000_000,
        gamma_levels: vec![],
        no_branching: false,
        snapshots: vec![],
    };
    let sample_seed = mix(seed ^ 0x6E6E_A1A6_0000_0001);
    let rows = run_replicas(&cfg, replicas, |r, forest| -> Result<ReplicaOutcome> {
        let z = forest.population();
        let mut out = ReplicaOutcome {
            replica: r,
            z,
            capped: forest.capped,
            pair_distance: None,
            marks: vec![],
            triangle_violations: None,
        };
        if z == 0 {
            return Ok(out);
        }
        let s = extract_mmm(forest, horizon, Some(n))?;
        let mut rng = stream(sample_seed, r);
        if z >= k {
            let (d, marks) = distinct_leaves(&s, k, &mut rng)?;
            out.pair_distance = Some(d[0][1]);
            out.marks = marks;
        } else {
            out.marks = vec![s.marks[rng.gen_range(0..z)]];
        }
        if z >= 3 {
            let (d, _) = distinct_leaves(&s, 3, &mut rng)?;
            out.triangle_violations = Some(triangle_violations(&d));
        }
        Ok(out)
    })?;
    Ok(SurvivalBatch {
        n,
        t,
        x0,
        l: sd.l,
        seed,
        outcomes: rows.into_iter().collect::<Result<Vec<_>>>()?,
    })
}

fn require_pushed(regime: Regime) -> Result<()> {
    if regime != Regime::FullyPushed {
        return Err(Error::UnsupportedRegime {
            regime: regime.name(),
            required: "fully pushed (Sigma^2 undefined otherwise)",
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Sufficiency {
    Ok,
    InsufficientSurvivors {
        survivors: usize,
        needed: usize,
        suggested_replicas: usize,
    },
}

fn sufficiency(batch: &SurvivalBatch, sd: &SpectralData, needed: usize) -> Result<Sufficiency> {
    let s = batch.survivors();
    if s >= needed {
        return Ok(Sufficiency::Ok);
    }
    // survival probability from the limit formula when nothing survived
    let p = if s > 0 {
        s as f64 / batch.replicas() as f64
    } else {
        2.0 * sd.limit()?.h(batch.x0) / (sd.sigma2()? * batch.t * batch.n)
    };
    Ok(Sufficiency::InsufficientSurvivors {
        survivors: s,
        needed,
        suggested_replicas: (1.2 * needed as f64 / p).ceil() as usize,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YaglomReport {
    pub sufficiency: Sufficiency,
    pub replicas: usize,
    pub survivors: usize,
    /// `Sigma^2 t / 2`
    pub limit_mean: f64,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub mean_rel_err: f64,
    /// `E[X^2] / (2 E[X]^2)`
    pub moment_ratio: f64,
    pub ks_fitted: Option<KsResult>,
    pub ks_limit: Option<KsResult>,
    pub gates: Vec<Gate>,
}

/// Conditional law of `Z_{tN} / N` given survival.
pub fn run_yaglom(sd: &SpectralData, batch: &SurvivalBatch, th: &Thresholds) -> Result<YaglomReport> {
    require_pushed(sd.regime)?;
    let sigma2 = sd.sigma2()?;
    let limit_mean = sigma2 * batch.t / 2.0;
    let xs: Vec<f64> = batch
        .outcomes
        .iter()
        .filter(|o| o.z > 0)
        .map(|o| o.z as f64 / batch.n)
        .collect();
    let suff = sufficiency(batch, sd, th.min_survivors)?;
    let ms = mean_se(&xs);
    let m2 = xs.iter().map(|x| x * x).sum::<f64>() / xs.len().max(1) as f64;
    let variance = if xs.len() > 1 {
        (m2 - ms.mean * ms.mean) * xs.len() as f64 / (xs.len() - 1) as f64
    } else {
        f64::NAN
    };
    let ratio = m2 / (2.0 * ms.mean * ms.mean);
    let rel = (ms.mean - limit_mean).abs() / limit_mean;
    let (ks_fitted, ks_limit) = if xs.is_empty() {
        (None, None)
    } else {
        let m = ms.mean;
        (
            Some(ks_one_sample(&xs, |x| 1.0 - (-x / m).exp())),
            Some(ks_one_sample(&xs, |x| 1.0 - (-x / limit_mean).exp())),
        )
    };
    let mut gates = vec![Gate::at_least("yaglom.survivors", xs.len() as f64, th.min_survivors as f64)];
    if suff == Sufficiency::Ok {
        gates.push(Gate::at_most("yaglom.mean_rel_err", rel, th.yaglom_mean_tol));
        gates.push(Gate::new(
            "yaglom.moment_ratio",
            ratio,
            format!("in [{}, {}]", th.moment_band[0], th.moment_band[1]),
            ratio >= th.moment_band[0] && ratio <= th.moment_band[1],
        ));
        let p = ks_fitted.map(|k| k.p_value).unwrap_or(0.0);
        gates.push(Gate::p_above("yaglom.ks_fitted_p", p, th.ks_p));
    }
    Ok(YaglomReport {
        sufficiency: suff,
        replicas: batch.replicas(),
        survivors: xs.len(),
        limit_mean,
        mean: ms.mean,
        mean_se: ms.se,
        variance,
        mean_rel_err: rel,
        moment_ratio: ratio,
        ks_fitted,
        ks_limit,
        gates,
    })
}

/// Bin edges with equal mass under `law`, the last edge at infinity.
pub fn equiprobable_edges(law: &MarkLaw, bins: usize) -> Vec<f64> {
    let mut edges = vec![0.0];
    for i in 1..bins {
        let target = i as f64 / bins as f64;
        let mut hi = 1.0;
        while law.cdf(hi) < target {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if law.cdf(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        edges.push(0.5 * (lo + hi));
    }
    edges.push(f64::INFINITY);
    edges
}

fn chi_square_equiprobable(xs: &[f64], law: &MarkLaw, bins: usize) -> crate::stats::ChiSquareResult {
    let edges = equiprobable_edges(law, bins);
    let obs = histogram(xs, &edges);
    let exp = vec![xs.len() as f64 / bins as f64; bins];
    chi_square(&obs, &exp, 5.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Checkpoint {
    pub construction: String,
    pub estimate: f64,
    pub se: f64,
    pub exact: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenealogyReport {
    pub sufficiency: Sufficiency,
    pub pairs: usize,
    pub ks_pair_depth: Option<KsResult>,
    pub marks: usize,
    pub mark_chi2_statistic: f64,
    pub mark_chi2_dof: usize,
    pub mark_chi2_p: f64,
    pub triangles: usize,
    pub ultrametric_violations: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub gates: Vec<Gate>,
}

/// Pooled rescaled pair distances and marks of surviving replicas against
/// the coalescent point process and `h~^inf`.
pub fn run_genealogy(
    sd: &SpectralData,
    batch: &SurvivalBatch,
    opts: &GenealogyOptions,
    th: &Thresholds,
    seed: u64,
) -> Result<GenealogyReport> {
    require_pushed(sd.regime)?;
    let lp = sd.limit()?;
    let t = batch.t;
    let suff = sufficiency(batch, sd, th.min_survivors)?;
    let pairs: Vec<f64> = batch.outcomes.iter().filter_map(|o| o.pair_distance).collect();
    let marks: Vec<f64> = batch
        .outcomes
        .iter()
        .filter(|o| o.z > 0)
        .map(|o| o.marks[0])
        .collect();
    let ks = (!pairs.is_empty()).then(|| ks_one_sample(&pairs, |s| pair_depth_cdf(s, t)));
    let law = MarkLaw::h_tilde_inf(lp);
    let chi = chi_square_equiprobable(&marks, &law, th.mark_bins);
    let triangles = batch.outcomes.iter().filter(|o| o.triangle_violations.is_some()).count();
    let violations: usize = batch.outcomes.iter().filter_map(|o| o.triangle_violations).sum();

    let exact = 4.0 * std::f64::consts::LN_2 - 2.0;
    let mut checkpoints = Vec::new();
    let m = opts.cpp_replicas;
    let mut rng = stream(seed, 0xC0A1_0001);
    let mut hits = Vec::with_capacity(m);
    for _ in 0..m {
        let h = sample_h(2, t, None, &mut rng)?;
        hits.push((h.get(0, 1) <= t / 2.0) as u8 as f64);
    }
    checkpoints.push(checkpoint("sample_h", &hits, exact));
    let mut rng = stream(seed, 0xC0A1_0002);
    hits.clear();
    for _ in 0..m {
        let c = sample_cpp(t, opts.cpp_floor * t, 50_000_000, &mut rng)?;
        let (_, d, _) = c.sample_leaves(2, &mut rng);
        hits.push((d[0][1] <= t / 2.0) as u8 as f64);
    }
    checkpoints.push(checkpoint("sample_cpp", &hits, exact));

    let mut gates = vec![Gate::at_least("genealogy.survivors", marks.len() as f64, th.min_survivors as f64)];
    if suff == Sufficiency::Ok {
        let d = ks.map(|k| k.statistic).unwrap_or(1.0);
        gates.push(Gate::at_most("genealogy.ks_pair_depth", d, th.genealogy_ks_max));
        gates.push(Gate::p_above("genealogy.mark_chi2_p", chi.p_value, th.chi2_p));
    }
    gates.push(Gate::at_most("genealogy.ultrametric_violations", violations as f64, 0.0));
    for c in &checkpoints {
        gates.push(Gate::at_most(&format!("genealogy.checkpoint_{}_z", c.construction), c.z, th.checkpoint_z));
    }
    Ok(GenealogyReport {
        sufficiency: suff,
        pairs: pairs.len(),
        ks_pair_depth: ks,
        marks: marks.len(),
        mark_chi2_statistic: chi.statistic,
        mark_chi2_dof: chi.dof,
        mark_chi2_p: chi.p_value,
        triangles,
        ultrametric_violations: violations,
        checkpoints,
        gates,
    })
}

fn checkpoint(name: &str, hits: &[f64], exact: f64) -> Checkpoint {
    let ms = mean_se(hits);
    Checkpoint {
        construction: name.into(),
        estimate: ms.mean,
        se: ms.se,
        exact,
        z: (ms.mean - exact).abs() / ms.se,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KolmogorovRow {
    pub n: f64,
    pub l: f64,
    /// `2 h^inf(x) / (Sigma^2 t)`
    pub limit: f64,
    /// `N u(tN, x)` from the PDE
    pub fkpp: f64,
    pub fkpp_rel_err: f64,
    pub ratio_spread: f64,
    pub halvings: usize,
    /// `N` times the survival frequency, with its standard error.
    pub mc: Option<(f64, f64)>,
    pub mc_rel_err: Option<f64>,
    pub mc_fkpp_z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KolmogorovReport {
    pub rows: Vec<KolmogorovRow>,
    pub trend_non_increasing: bool,
    /// `N u(tN, x)` at `n` with `dx`, `dt` halved, and its relative change.
    pub grid_check: Option<(f64, f64)>,
    pub gates: Vec<Gate>,
}

/// Three-way comparison of the survival probability: limit formula, PDE and
/// (at the batch size) direct simulation.
#[allow(clippy::too_many_arguments)]
pub fn run_kolmogorov(
    pot: &Potential,
    spectral: &SpectralOptions,
    n: f64,
    t: f64,
    x0: f64,
    opts: &KolmogorovOptions,
    batch: Option<&SurvivalBatch>,
    th: &Thresholds,
) -> Result<KolmogorovReport> {
    let lim = limit_top_eigenvalue(pot, spectral)?;
    require_pushed(lim.regime)?;
    let mut list = opts.n_list.clone();
    if !list.contains(&n) {
        list.push(n);
    }
    list.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cfg = FkppConfig {
        dx: opts.dx,
        dt: opts.dt,
        ..Default::default()
    };
    let mut rows = Vec::new();
    let mut grid_check = None;
    for &m in &list {
        let (sd, _) = harmonic_data(pot, m, spectral)?;
        let c = FkppConfig {
            t_end: t * m,
            ..cfg.clone()
        };
        let k = kolmogorov_check(&sd, m, t, x0, &c)?;
        let mut row = KolmogorovRow {
            n: m,
            l: sd.l,
            limit: k.rhs,
            fkpp: k.lhs,
            fkpp_rel_err: k.rel_err,
            ratio_spread: k.ratio_spread,
            halvings: k.trajectory.halvings,
            mc: None,
            mc_rel_err: None,
            mc_fkpp_z: None,
        };
        if m == n {
            if let Some(b) = batch.filter(|_| opts.monte_carlo) {
                if b.n != n || b.x0 != x0 || b.t != t {
                    return Err(Error::InvalidParameter("survival batch does not match (N, t, x0)".into()));
                }
                let p = b.survivors() as f64 / b.replicas() as f64;
                let se = (p * (1.0 - p) / b.replicas() as f64).sqrt();
                row.mc = Some((n * p, n * se));
                row.mc_rel_err = Some((n * p - k.rhs).abs() / k.rhs);
                row.mc_fkpp_z = Some((n * p - k.lhs).abs() / (n * se));
            }
            if opts.grid_check {
                let fine = FkppConfig {
                    dx: opts.dx / 2.0,
                    dt: opts.dt / 2.0,
                    ..c.clone()
                };
                let kf = kolmogorov_check(&sd, m, t, x0, &fine)?;
                grid_check = Some((kf.lhs, (kf.lhs - k.lhs).abs() / k.lhs));
            }
        }
        rows.push(row);
    }
    let trend = rows.windows(2).all(|w| w[1].fkpp_rel_err <= w[0].fkpp_rel_err);
    let mut gates = Vec::new();
    let at_n = rows.iter().find(|r| r.n == n).expect("n is in the list");
    gates.push(Gate::at_most("kolmogorov.fkpp_rel_err", at_n.fkpp_rel_err, th.kolmogorov_tol));
    gates.push(Gate::new(
        "kolmogorov.fkpp_trend",
        rows.iter().map(|r| r.fkpp_rel_err).last().unwrap_or(f64::NAN),
        "non-increasing in N".into(),
        trend,
    ));
    gates.push(Gate::at_most("kolmogorov.ratio_spread", at_n.ratio_spread, th.sweep_spread));
    if let (Some((mc, _)), Some(z)) = (at_n.mc, at_n.mc_fkpp_z) {
        gates.push(Gate::at_most("kolmogorov.mc_fkpp_z", z, th.mc_z));
        gates.push(Gate::at_most(
            "kolmogorov.mc_rel_err",
            (mc - at_n.limit).abs() / at_n.limit,
            th.kolmogorov_tol,
        ));
    }
    if let Some((_, change)) = grid_check {
        gates.push(Gate::at_most("kolmogorov.grid_change", change, th.grid_tol));
    }
    Ok(KolmogorovReport {
        rows,
        trend_non_increasing: trend,
        grid_check,
        gates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpineLimitReport {
    pub n: f64,
    pub replicas: usize,
    pub branch_mark_chi2_p: f64,
    pub branch_mark_chi2_dof: usize,
    pub estimate: f64,
    pub se: f64,
    /// `(Sigma^2 / 2) int phi_1 Pi^inf int phi_2 Pi^inf`
    pub limit: f64,
    pub rel_err: f64,
    pub ess: f64,
    pub gates: Vec<Gate>,
}

/// First test function: indicator of `[0.5, 1.5]`.
pub fn spine_phi_1(y: f64) -> f64 {
    if (0.5..=1.5).contains(&y) {
        1.0
    } else {
        0.0
    }
}

/// Second test function: a sine bump on `[0.2, 2.5]`.
pub fn spine_phi_2(y: f64) -> f64 {
    if y > 0.2 && y < 2.5 {
        (std::f64::consts::PI * (y - 0.2) / 2.3).sin()
    } else {
        0.0
    }
}

/// Accelerated 2-spine at large `N`: branch marks against `Pi^inf` and the
/// weighted functional against its limit.
#[allow(clippy::too_many_arguments)]
pub fn run_spine_limit(
    pot: &Potential,
    spectral: &SpectralOptions,
    n: f64,
    t: f64,
    x0: f64,
    replicas: usize,
    seed: u64,
    th: &Thresholds,
) -> Result<SpineLimitReport> {
    let (sd, hs) = harmonic_data(pot, n, spectral)?;
    let lp = sd.limit()?;
    let sampler = SpineSampler::new(&sd);
    let (est, rows) = limit_functional(
        &sampler,
        2,
        t,
        x0,
        &|_, _, _| 1.0,
        &[&spine_phi_1, &spine_phi_2],
        replicas,
        n,
        seed,
    )?;
    let marks: Vec<f64> = rows.iter().map(|r| r.0.branches[0].mark).collect();
    let chi = chi_square_equiprobable(&marks, &MarkLaw::pi_inf(lp), th.mark_bins);
    let i1 = gauss_panels(|y| spine_phi_1(y) * lp.pi(y), &[0.5, 1.0, 1.5], 20);
    let i2 = gauss_panels(|y| spine_phi_2(y) * lp.pi(y), &[0.2, 1.0, 2.5], 20);
    let limit = hs.sigma2 / 2.0 * i1 * i2;
    let rel = (est.value - limit).abs() / limit;
    let gates = vec![
        Gate::p_above("spine.branch_mark_chi2_p", chi.p_value, th.chi2_p),
        Gate::at_most("spine.rel_err", rel, th.spine_tol),
    ];
    Ok(SpineLimitReport {
        n,
        replicas,
        branch_mark_chi2_p: chi.p_value,
        branch_mark_chi2_dof: chi.dof,
        estimate: est.value,
        se: est.se,
        limit,
        rel_err: rel,
        ess: est.ess,
        gates,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub name: String,
    pub stamp: Stamp,
    pub survivors: Option<usize>,
    pub replicas: Option<usize>,
    pub capped: Option<usize>,
    pub yaglom: Option<YaglomReport>,
    pub genealogy: Option<GenealogyReport>,
    pub kolmogorov: Option<KolmogorovReport>,
    pub spine_limit: Option<SpineLimitReport>,
    #[serde(skip)]
    pub batch: Option<SurvivalBatch>,
}

impl Report {
    pub fn gates(&self) -> Vec<&Gate> {
        let mut g: Vec<&Gate> = Vec::new();
        if let Some(y) = &self.yaglom {
            g.extend(&y.gates);
        }
        if let Some(x) = &self.genealogy {
            g.extend(&x.gates);
        }
        if let Some(x) = &self.kolmogorov {
            g.extend(&x.gates);
        }
        if let Some(x) = &self.spine_limit {
            g.extend(&x.gates);
        }
        g
    }

    pub fn passed(&self) -> bool {
        self.capped.unwrap_or(0) == 0 && self.gates().iter().all(|g| g.passed)
    }
}

/// Runs every requested check of `exp`.
pub fn run_experiment(exp: &Experiment) -> Result<Report> {
    exp.validate()?;
    let pot = exp.potential()?;
    let stamp = exp.stamp();
    let wants = |c: Check| exp.checks.contains(&c);
    let need_batch = wants(Check::Yaglom)
        || wants(Check::Genealogy)
        || (wants(Check::Kolmogorov) && exp.kolmogorov.monte_carlo);
    let mut report = Report {
        name: exp.name.clone(),
        stamp,
        survivors: None,
        replicas: None,
        capped: None,
        yaglom: None,
        genealogy: None,
        kolmogorov: None,
        spine_limit: None,
        batch: None,
    };
    if need_batch {
        let (sd, _) = harmonic_data(&pot, exp.n, &exp.spectral)?;
        let batch = run_survival_batch(
            &sd,
            exp.n,
            exp.t,
            exp.x0,
            exp.replicas,
            exp.seed,
            exp.sim_dt,
            exp.genealogy.k,
        )?;
        report.survivors = Some(batch.survivors());
        report.replicas = Some(batch.replicas());
        report.capped = Some(batch.capped());
        if wants(Check::Yaglom) {
            report.yaglom = Some(run_yaglom(&sd, &batch, &exp.thresholds)?);
        }
        if wants(Check::Genealogy) {
            report.genealogy = Some(run_genealogy(&sd, &batch, &exp.genealogy, &exp.thresholds, exp.seed)?);
        }
        report.batch = Some(batch);
    }
    if wants(Check::Kolmogorov) {
        report.kolmogorov = Some(run_kolmogorov(
            &pot,
            &exp.spectral,
            exp.n,
            exp.t,
            exp.x0,
            &exp.kolmogorov,
            report.batch.as_ref(),
            &exp.thresholds,
        )?);
    }
    if wants(Check::SpineLimit) {
        report.spine_limit = Some(run_spine_limit(
            &pot,
            &exp.spectral,
            exp.spine.n,
            exp.t,
            exp.x0,
            exp.spine.replicas,
            mix(exp.seed ^ 0x5B1E),
            &exp.thresholds,
        )?);
    }
    Ok(report)
}

fn csv_file(dir: &Path, name: &str, stamp: &Stamp) -> Result<csv::Writer<fs::File>> {
    let mut f = fs::File::create(dir.join(name))?;
    f.write_all(stamp.header().as_bytes())?;
    Ok(csv::Writer::from_writer(f))
}

/// Writes `report.json`, `gates.csv` and, when present, `replicas.csv` and
/// `kolmogorov.csv` into `dir`. Every file starts with the stamp.
pub fn write_outputs(report: &Report, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;

    let mut w = csv_file(dir, "gates.csv", &report.stamp)?;
    w.write_record(["gate", "value", "bound", "passed"])?;
    for g in report.gates() {
        w.write_record([g.name.clone(), format!("{:.12e}", g.value), g.bound.clone(), g.passed.to_string()])?;
    }
    w.flush()?;

    if let Some(b) = &report.batch {
        let mut w = csv_file(dir, "replicas.csv", &report.stamp)?;
        w.write_record(["replica", "z", "z_over_n", "pair_distance", "mark", "triangle_violations"])?;
        for o in b.outcomes.iter().filter(|o| o.z > 0) {
            w.write_record([
                o.replica.to_string(),
                o.z.to_string(),
                format!("{:.12e}", o.z as f64 / b.n),
                o.pair_distance.map(|d| format!("{d:.12e}")).unwrap_or_default(),
                format!("{:.12e}", o.marks[0]),
                o.triangle_violations.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
    }
    if let Some(k) = &report.kolmogorov {
        let mut w = csv_file(dir, "kolmogorov.csv", &report.stamp)?;
        w.write_record(["n", "l", "limit", "fkpp", "fkpp_rel_err", "mc", "mc_se"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        for r in &k.rows {
            w.write_record([
                format!("{}", r.n),
                format!("{:.12e}", r.l),
                format!("{:.12e}", r.limit),
                format!("{:.12e}", r.fkpp),
                format!("{:.12e}", r.fkpp_rel_err),
                opt(r.mc.map(|m| m.0)),
                opt(r.mc.map(|m| m.1)),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}
