use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pushedfront::bbm_sim::{replica_stats, run_replicas, simulate_replica, SimConfig};
use pushedfront::cpp::sample_h;
use pushedfront::fkpp::{kolmogorov_check, solve_fkpp, FkppConfig};
use pushedfront::harness::{run_experiment, write_outputs, Experiment, Stamp};
use pushedfront::kspine::{many_to_few_estimate, SpineSampler};
use pushedfront::rng::stream;
use pushedfront::sampling::MarkLaw;
use pushedfront::semigroup::KernelEvaluator;
use pushedfront::spectral::{eigenvalue, harmonic_data, Eigenfunction, SpectralData};
use pushedfront::{Error, Potential};

#[derive(Parser)]
#[command(name = "pushedfront", version, about = "Inhomogeneous BBM in the fully pushed regime")]
struct Cli {
    /// Experiment JSON (for `simulate`: a simulation config).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Dirichlet eigenvalues on [0, L].
    Spectrum {
        #[arg(long)]
        potential: Option<String>,
        #[arg(long = "L")]
        l: f64,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Heat kernel, spine kernel and stationary density.
    Kernel(KernelArgs),
    /// Direct BBM simulation.
    Simulate {
        #[arg(long, default_value_t = 1)]
        replicas: usize,
        #[arg(long)]
        emit_forest: Option<PathBuf>,
        #[arg(long)]
        emit_stats: Option<PathBuf>,
    },
    /// k-spine many-to-few estimator.
    Spine {
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        x0: Option<f64>,
        #[arg(long = "N")]
        n: Option<f64>,
        #[arg(long, default_value_t = 10_000)]
        replicas: usize,
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Coalescent point process genealogies.
    Cpp {
        #[arg(long = "T", default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 10_000)]
        replicas: usize,
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Survival probability from the FKPP equation.
    Fkpp {
        #[arg(long = "N")]
        n: Option<f64>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, default_value_t = 100)]
        snapshots: usize,
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Runs the configured acceptance experiment.
    Verify,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long)]
    potential: Option<String>,
    #[arg(long = "L", default_value_t = 20.0)]
    l: f64,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    x: Option<f64>,
    #[arg(long)]
    y: Option<f64>,
    /// `t,x`
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    emit: Option<PathBuf>,
}

fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::InvalidParameter(_)
            | Error::InvalidPotential(_)
            | Error::Json(_)
            | Error::UnsupportedRegime { .. }
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn experiment(cli: &Cli) -> pushedfront::Result<Experiment> {
    let mut exp = match &cli.config {
        Some(p) => Experiment::load(p)?,
        None => Experiment::default(),
    };
    if let Some(s) = cli.seed {
        exp.seed = s;
    }
    if let Some(o) = &cli.out {
        exp.out = Some(o.display().to_string());
    }
    Ok(exp)
}

fn create(path: &Path, stamp: &Stamp) -> pushedfront::Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(stamp.header().as_bytes())?;
    Ok(w)
}

fn run(cli: Cli) -> pushedfront::Result<bool> {
    if let Cmd::Simulate {
        replicas,
        emit_forest,
        emit_stats,
    } = &cli.cmd
    {
        return simulate_cmd(&cli, *replicas, emit_forest.as_deref(), emit_stats.as_deref());
    }
    let exp = experiment(&cli)?;
    let stamp = exp.stamp();
    let pot_of = |p: &Option<String>| -> pushedfront::Result<Potential> {
        match p {
            Some(s) => Potential::parse_spec(s),
            None => exp.potential(),
        }
    };
    match &cli.cmd {
        Cmd::Spectrum { potential, l, k, emit } => {
            let pot = pot_of(potential)?;
            let mut rows = Vec::new();
            for i in 1..=*k {
                let ev = eigenvalue(&pot, *l, i, &exp.spectral)?;
                let ef = Eigenfunction::build(&pot, *l, &ev, &exp.spectral)?;
                rows.push(format!("{},{:.15e},{:.15e},{}", i, ev.lambda, ef.norm2, ef.n_zeros));
            }
            emit_rows(emit.as_deref(), &stamp, "k,lambda_k,norm,n_zeros", &rows)?;
        }
        Cmd::Kernel(a) => {
            let pot = pot_of(&a.potential)?;
            let sd = SpectralData::build(&pot, a.l, &exp.spectral)?;
            let ke = KernelEvaluator::new(&sd);
            if let Some(p) = &a.profile {
                let (t, x) = parse_pair(p)?;
                let ys: Vec<f64> = (0..=400).map(|i| a.l * i as f64 / 400.0).collect();
                let rows: Vec<String> = ke
                    .profile(t, x, &ys)?
                    .iter()
                    .zip(&ys)
                    .map(|((p, q, pi), y)| format!("{y},{p:.15e},{q:.15e},{pi:.15e}"))
                    .collect();
                emit_rows(a.emit.as_deref(), &stamp, "y,p_t,q_t,Pi", &rows)?;
            } else {
                let (Some(t), Some(x), Some(y)) = (a.t, a.x, a.y) else {
                    return Err(Error::Config("kernel needs --t --x --y or --profile t,x".into()));
                };
                let r = ke.profile(t, x, &[y])?[0];
                let rows = vec![format!("{y},{:.15e},{:.15e},{:.15e}", r.0, r.1, r.2)];
                emit_rows(a.emit.as_deref(), &stamp, "y,p_t,q_t,Pi", &rows)?;
            }
        }
        Cmd::Spine {
            k,
            t,
            x0,
            n,
            replicas,
            emit,
        } => {
            let pot = exp.potential()?;
            let n = n.unwrap_or(exp.n);
            let (t, x0) = (t.unwrap_or(exp.t), x0.unwrap_or(exp.x0));
            let (sd, _) = harmonic_data(&pot, n, &exp.spectral)?;
            let sampler = SpineSampler::new(&sd);
            let one = |_: f64| 1.0;
            let phis: Vec<&(dyn Fn(f64) -> f64 + Sync)> = vec![&one; *k];
            let (est, rows) = many_to_few_estimate(&sampler, *k, t, x0, &|_, _, _| 1.0, &phis, *replicas, n, exp.seed)?;
            let mut header = vec!["replica".to_string(), "weight".into()];
            for i in 0..*k {
                for j in i + 1..*k {
                    header.push(format!("U_{i}_{j}"));
                }
            }
            header.extend((0..*k).map(|i| format!("zeta_{i}")));
            header.push("estimate_contrib".into());
            let lines: Vec<String> = rows
                .iter()
                .enumerate()
                .map(|(r, (tree, c))| {
                    let mut f = vec![r.to_string(), format!("{:.15e}", pushedfront::kspine::spine_weight(tree, &sd))];
                    for i in 0..*k {
                        for j in i + 1..*k {
                            f.push(format!("{:.15e}", tree.u_labelled(i, j)));
                        }
                    }
                    f.extend((0..*k).map(|i| format!("{:.15e}", tree.leaf_mark(i))));
                    f.push(format!("{c:.15e}"));
                    f.join(",")
                })
                .collect();
            if emit.is_some() {
                emit_rows(emit.as_deref(), &stamp, &header.join(","), &lines)?;
            }
            println!("{}", serde_json::to_string_pretty(&est)?);
        }
        Cmd::Cpp { t, k, replicas, emit } => {
            let pot = exp.potential()?;
            let law = SpectralData::build(&pot, 10.0, &exp.spectral)
                .ok()
                .and_then(|sd| sd.limit.as_ref().map(MarkLaw::h_tilde_inf));
            let mut rng = stream(exp.seed, 0xC99);
            let mut header = vec!["replica".to_string(), "theta".into()];
            for i in 0..*k {
                for j in i + 1..*k {
                    header.push(format!("H_{i}_{j}"));
                }
            }
            if law.is_some() {
                header.extend((0..*k).map(|i| format!("mark_{i}")));
            }
            let mut lines = Vec::with_capacity(*replicas);
            for r in 0..*replicas {
                let h = sample_h(*k, *t, law.as_ref(), &mut rng)?;
                let mut f = vec![r.to_string(), format!("{:.15e}", h.theta)];
                f.extend(h.pairs().iter().map(|v| format!("{v:.15e}")));
                f.extend(h.marks.iter().map(|v| format!("{v:.15e}")));
                lines.push(f.join(","));
            }
            emit_rows(emit.as_deref(), &stamp, &header.join(","), &lines)?;
        }
        Cmd::Fkpp { n, t, snapshots, emit } => {
            let pot = exp.potential()?;
            let n = n.unwrap_or(exp.n);
            let t = t.unwrap_or(exp.t);
            let (sd, _) = harmonic_data(&pot, n, &exp.spectral)?;
            let steps = (t * n / exp.kolmogorov.dt).round() as usize;
            let probes = vec![1.0, exp.x0, 0.25 * sd.l, 0.5 * sd.l];
            let cfg = FkppConfig {
                t_end: t * n,
                dx: exp.kolmogorov.dx,
                dt: exp.kolmogorov.dt,
                probes: probes.clone(),
                record_every: (steps / snapshots.max(&1)).max(1),
                ..Default::default()
            };
            let tr = solve_fkpp(&sd, &cfg)?;
            let mut header = vec!["t".to_string(), "a_t".into()];
            header.extend(probes.iter().map(|x| format!("u_{x:.4}")));
            let lines: Vec<String> = tr
                .times
                .iter()
                .zip(&tr.a)
                .zip(&tr.probe_values)
                .map(|((t, a), u)| {
                    let mut f = vec![format!("{t}"), format!("{a:.15e}")];
                    f.extend(u.iter().map(|v| format!("{v:.15e}")));
                    f.join(",")
                })
                .collect();
            emit_rows(emit.as_deref(), &stamp, &header.join(","), &lines)?;
            let k = kolmogorov_check(&sd, n, t, exp.x0, &cfg)?;
            eprintln!(
                "N u(tN, x0) = {:.6}, limit = {:.6}, rel_err = {:.4}",
                k.lhs, k.rhs, k.rel_err
            );
        }
        Cmd::Verify => {
            let report = run_experiment(&exp)?;
            let dir = PathBuf::from(exp.out.clone().unwrap_or_else(|| format!("out/{}", exp.name)));
            write_outputs(&report, &dir)?;
            for g in report.gates() {
                println!(
                    "{} {:<40} {:>14.6e} {}",
                    if g.passed { "PASS" } else { "FAIL" },
                    g.name,
                    g.value,
                    g.bound
                );
            }
            if report.capped.unwrap_or(0) > 0 {
                println!("FAIL {} replicas hit the particle cap", report.capped.unwrap());
            }
            println!("outputs in {}", dir.display());
            return Ok(report.passed());
        }
        Cmd::Simulate { .. } => unreachable!(),
    }
    Ok(true)
}

fn parse_pair(s: &str) -> pushedfront::Result<(f64, f64)> {
    let bad = || Error::Config(format!("expected t,x, got {s:?}"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn emit_rows(path: Option<&Path>, stamp: &Stamp, header: &str, rows: &[String]) -> pushedfront::Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p, stamp)?;
            writeln!(w, "{header}")?;
            for r in rows {
                writeln!(w, "{r}")?;
            }
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            writeln!(w, "{header}")?;
            for r in rows {
                writeln!(w, "{r}")?;
            }
        }
    }
    Ok(())
}

fn simulate_cmd(cli: &Cli, replicas: usize, forest: Option<&Path>, stats: Option<&Path>) -> pushedfront::Result<bool> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("simulate needs --config <simulation json>".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut cfg: SimConfig = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let stamp = Stamp {
        version: pushedfront::harness::VERSION.into(),
        seed: cfg.seed,
        config_sha256: {
            use sha2::{Digest, Sha256};
            let d = Sha256::digest(serde_json::to_string(&cfg)?.as_bytes());
            d.iter().map(|b| format!("{b:02x}")).collect()
        },
    };
    let rows = run_replicas(&cfg, replicas, |r, f| replica_stats(r, f))?;
    let mut header = vec!["replica".to_string(), "survived".into(), "Z_t".into()];
    header.extend(cfg.gamma_levels.iter().map(|g| format!("escapes_{g}")));
    let lines: Vec<String> = rows
        .iter()
        .map(|s| {
            let mut f = vec![s.replica.to_string(), s.survived.to_string(), s.z.to_string()];
            f.extend(s.escapes.iter().map(|e| e.to_string()));
            f.join(",")
        })
        .collect();
    emit_rows(stats, &stamp, &header.join(","), &lines)?;
    if let Some(p) = forest {
        let mut w = create(p, &stamp)?;
        writeln!(w, "id,parent_id,birth,death,cause,planar_bit,x_at_death")?;
        for r in 0..replicas as u64 {
            let f = simulate_replica(&cfg, r)?;
            writeln!(w, "# replica {r}")?;
            for line in f.to_csv_rows() {
                writeln!(w, "{line}")?;
            }
        }
        w.flush()?;
    }
    let capped = rows.iter().filter(|s| s.capped).count();
    if capped > 0 {
        eprintln!("{capped} replicas hit the particle cap");
    }
    Ok(capped == 0)
}
