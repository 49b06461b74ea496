//! Builds the configured instance, runs the engine and writes the artifacts.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use blockpd::block_model::{
    make_consensus, make_model_fitting, make_random_inconsistent_ls, BlockStructure, ProblemSpec,
    ProxFn, QuadraticSmooth, RandomLsOptions, SeparableProx, SmoothFn, ZeroSmooth,
};
use blockpd::dlmp::{
    build_opf_problem, extract_dlmp, load_network, NetworkModel, OpfOptions, OpfProblem, Ppdlmp,
};
use blockpd::sampling::Sampling;
use blockpd::solver::{
    run_with_callback, EngineKind, EngineOptions, MiChecker, Reference, RunOptions, TraceRecord,
};
use blockpd::stepsize::{convex_default_policy, AcceleratedPolicy, StepPolicy};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use crate::config::{EngineChoice, Experiment, PolicyChoice, RunConfig, SamplingChoice};
use crate::rates::fit_rate;
use crate::CliError;

/// Version tag written on the first line of every trace file.
pub const TRACE_HEADER: &str = "# blockpd-trace v1";

const TRACE_COLUMNS: [&str; 12] = [
    "k",
    "psi_x",
    "psi_hat",
    "psi_w",
    "psi_hat_gap",
    "h_gap_x",
    "h_gap_w",
    "residual",
    "kkt",
    "tau",
    "sigma",
    "lyapunov",
];

/// Trace columns that receive a rate fit when positive data is available.
const RATE_COLUMNS: [&str; 5] = ["psi_hat_gap", "h_gap_w", "h_gap_x", "residual", "kkt"];

/// Paths of the files written by a run.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub trace: PathBuf,
    pub metadata: PathBuf,
    pub rates: PathBuf,
    pub dlmp: Option<PathBuf>,
    pub final_k: usize,
    pub converged: bool,
}

struct Instance {
    problem: ProblemSpec,
    x0: DVector<f64>,
    reference: Option<(Reference, &'static str)>,
    opf: Option<OpfProblem>,
    info: Value,
}

fn instance_seed(cfg: &RunConfig) -> u64 {
    cfg.instance.seed.unwrap_or(cfg.seed)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn baseline_box(bounds: Option<[f64; 2]>) -> Result<Option<(f64, f64)>, CliError> {
    match bounds {
        Some([lo, hi]) if lo > hi => Err(CliError::Config(
            "instance.bounds must satisfy lo ≤ hi".into(),
        )),
        Some([lo, hi]) => Ok(Some((lo, hi))),
        None => Ok(None),
    }
}

fn separable(
    dim: usize,
    mu: f64,
    l1: f64,
    bounds: Option<(f64, f64)>,
) -> Result<SeparableProx, CliError> {
    let mut r = SeparableProx::ridge(dim, mu).with_l1(l1);
    if let Some((lo, hi)) = bounds {
        r = r.with_box(vec![lo; dim], vec![hi; dim])?;
    }
    Ok(r)
}

fn build_random_ls(cfg: &RunConfig) -> Result<Instance, CliError> {
    let i = &cfg.instance;
    let defaults = RandomLsOptions::default();
    let opts = RandomLsOptions {
        seed: instance_seed(cfg),
        dims: vec![i.block_dim.unwrap_or(4); i.blocks.unwrap_or(10)],
        q: i.q.unwrap_or(defaults.q),
        noise: i.noise.unwrap_or(defaults.noise),
        lipschitz: i.lipschitz.unwrap_or(defaults.lipschitz),
        mu: i.mu.unwrap_or(defaults.mu),
        l1: i.l1.unwrap_or(defaults.l1),
        bounds: baseline_box(i.bounds)?,
    };
    let (problem, r) = make_random_inconsistent_ls(&opts)?;
    let exact = opts.q >= problem.m();
    let info = json!({
        "blocks": opts.dims.len(), "block_dim": opts.dims[0], "q": opts.q, "noise": opts.noise,
        "lipschitz": opts.lipschitz, "mu": opts.mu, "l1": opts.l1, "bounds": i.bounds, "seed": opts.seed,
    });
    let x0 = problem.feasible_start()?;
    let reference = exact.then(|| {
        (
            Reference {
                x_star: r.x_star,
                h_star: r.h_star,
                psi_star: r.psi_star,
            },
            "generator",
        )
    });
    Ok(Instance {
        problem,
        x0,
        reference,
        opf: None,
        info,
    })
}

fn build_consensus(cfg: &RunConfig) -> Result<Instance, CliError> {
    let i = &cfg.instance;
    let n = i.nodes.unwrap_or(8);
    if n < 2 {
        return Err(CliError::Config("instance.nodes must be at least 2".into()));
    }
    let edges: Vec<(usize, usize)> = match &i.edges {
        Some(e) => e.iter().map(|&[u, v]| (u, v)).collect(),
        None => (0..n).map(|u| (u, (u + 1) % n)).collect(),
    };
    let mu = i.mu.unwrap_or(1.0);
    let l1 = i.l1.unwrap_or(0.0);
    if !(mu > 0.0) {
        return Err(CliError::Config("consensus needs instance.mu > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(cfg));
    let targets: Vec<f64> = (0..n).map(|_| gaussian(&mut rng)).collect();
    let local = targets
        .iter()
        .map(|&t| {
            Ok(
                Arc::new(SeparableProx::zero(1).with_ridge(mu, vec![t])?.with_l1(l1))
                    as Arc<dyn ProxFn>,
            )
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let problem = make_consensus(&edges, local)?;
    // common value minimizing Σ (μ/2)(x − tᵢ)² + λ|x|
    let mean = targets.iter().sum::<f64>() / n as f64;
    let shrink = l1 / mu;
    let xs = mean.signum() * (mean.abs() - shrink).max(0.0);
    let x_star = DVector::from_element(n, xs);
    let psi_star = problem.eval_psi(x_star.as_slice())?;
    let x0 = DVector::zeros(n);
    Ok(Instance {
        problem,
        x0,
        reference: Some((
            Reference {
                x_star,
                h_star: 0.0,
                psi_star,
            },
            "closed_form",
        )),
        opf: None,
        info: json!({ "nodes": n, "edges": edges, "mu": mu, "l1": l1, "targets": targets }),
    })
}

fn build_model_fit(cfg: &RunConfig) -> Result<Instance, CliError> {
    let i = &cfg.instance;
    let (q, p) = (i.samples.unwrap_or(20), i.features.unwrap_or(10));
    let l1 = i.l1.unwrap_or(0.1);
    let noise = i.noise.unwrap_or(0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(cfg));
    let k = DMatrix::from_fn(q, p, |_, _| gaussian(&mut rng) / (q as f64).sqrt());
    let truth = DVector::from_fn(p, |j, _| if j % 3 == 0 { gaussian(&mut rng) } else { 0.0 });
    let b = &k * &truth + DVector::from_fn(q, |_, _| noise * gaussian(&mut rng));
    let losses: Vec<Arc<dyn SmoothFn>> = (0..q)
        .map(|_| Arc::new(QuadraticSmooth::scaled_distance(1.0, &[0.0])) as Arc<dyn SmoothFn>)
        .collect();
    let regs: Vec<Arc<dyn ProxFn>> = (0..p)
        .map(|_| Arc::new(SeparableProx::l1(1, l1)) as Arc<dyn ProxFn>)
        .collect();
    let problem = make_model_fitting(&k, &b, losses, regs)?;
    let x0 = DVector::zeros(problem.m());
    Ok(Instance {
        problem,
        x0,
        reference: None,
        opf: None,
        info: json!({ "samples": q, "features": p, "l1": l1, "noise": noise }),
    })
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    CliError::Config(format!(
                        "{} line {}: '{s}' is not a number",
                        path.display(),
                        line + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(CliError::Config(format!(
                    "{} line {}: ragged row",
                    path.display(),
                    line + 1
                )));
            }
        }
        rows.push(row);
    }
    let (nr, nc) = (rows.len(), rows.first().map_or(0, |r| r.len()));
    Ok(DMatrix::from_fn(nr, nc, |r, c| rows[r][c]))
}

fn build_custom(cfg: &RunConfig) -> Result<Instance, CliError> {
    let i = &cfg.instance;
    let a = read_matrix(i.a_file.as_ref().expect("validated"))?;
    let bm = read_matrix(i.b_file.as_ref().expect("validated"))?;
    if bm.ncols() != 1 || bm.nrows() != a.nrows() {
        return Err(CliError::Config(format!(
            "b_file must hold one column of {} values",
            a.nrows()
        )));
    }
    let dims = i.dims.clone().expect("validated");
    let blocks = BlockStructure::new(dims.clone())?;
    if blocks.m() != a.ncols() {
        return Err(CliError::Config(format!(
            "instance.dims sum to {} but a_file has {} columns",
            blocks.m(),
            a.ncols()
        )));
    }
    let bounds = baseline_box(i.bounds)?;
    let (mu, l1) = (i.mu.unwrap_or(0.0), i.l1.unwrap_or(0.0));
    let mut smooth: Vec<Arc<dyn SmoothFn>> = Vec::new();
    let mut prox: Vec<Arc<dyn ProxFn>> = Vec::new();
    let mut ab = Vec::new();
    for k in 0..blocks.d() {
        let dim = blocks.dim(k);
        smooth.push(Arc::new(ZeroSmooth { dim }));
        prox.push(Arc::new(separable(dim, mu, l1, bounds)?));
        ab.push(a.columns(blocks.offsets()[k], dim).into_owned());
    }
    let problem = ProblemSpec::new(blocks, smooth, prox, ab, bm.column(0).into_owned())?;
    let x0 = problem.feasible_start()?;
    Ok(Instance {
        problem,
        x0,
        reference: None,
        opf: None,
        info: json!({ "dims": dims, "mu": mu, "l1": l1, "bounds": i.bounds }),
    })
}

fn build_opf(cfg: &RunConfig) -> Result<Instance, CliError> {
    let i = &cfg.instance;
    let net = match (&i.network, &i.edges_file) {
        (Some(n), Some(e)) => load_network(n, e)?,
        (None, None) => NetworkModel::network15(),
        _ => {
            return Err(CliError::Config(
                "instance.network and instance.edges_file must be given together".into(),
            ))
        }
    };
    let opts = OpfOptions {
        aggregators: i.aggregators.clone(),
        keep_shunt: i.keep_shunt.unwrap_or(true),
        slack_bound: None,
    };
    let opf = build_opf_problem(&net, &opts)?;
    let info = json!({
        "buses": net.n(),
        "aggregators": opf.layout.aggregators,
        "keep_shunt": opts.keep_shunt,
        "network": i.network.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "bundled 15-bus".into()),
    });
    Ok(Instance {
        problem: opf.problem.clone(),
        x0: opf.x0.clone(),
        reference: None,
        opf: Some(opf),
        info,
    })
}

fn build_sampling(cfg: &RunConfig, d: usize) -> Result<Sampling, CliError> {
    if cfg.experiment == Experiment::Opf15 {
        if let Some(s) = &cfg.sampling {
            if s.kind != SamplingChoice::PairedDso {
                return Err(CliError::Config(
                    "opf15 runs use sampling.kind = \"paired_dso\"".into(),
                ));
            }
        }
        return Ok(Sampling::paired_dso(d - 1)?);
    }
    let Some(s) = &cfg.sampling else {
        return Ok(Sampling::single_uniform(d)?);
    };
    Ok(match s.kind {
        SamplingChoice::Single => match &s.probs {
            Some(p) => Sampling::single_coordinate(p.clone())?,
            None => Sampling::single_uniform(d)?,
        },
        SamplingChoice::Nice => Sampling::nice(d, s.m.expect("validated"))?,
        SamplingChoice::Uniform => Sampling::uniform(d, s.p.expect("validated"))?,
        SamplingChoice::Full => Sampling::full(d)?,
        SamplingChoice::PairedDso => Sampling::paired_dso(d - 1)?,
    })
}

fn build_policy(
    cfg: &RunConfig,
    problem: &ProblemSpec,
    sampling: &Sampling,
) -> Result<(StepPolicy, Value), CliError> {
    let choice = cfg.policy.as_ref().map_or(PolicyChoice::Convex, |p| p.kind);
    if cfg.experiment == Experiment::Opf15 && choice != PolicyChoice::Convex {
        return Err(CliError::Config("opf15 runs use the convex policy".into()));
    }
    Ok(match choice {
        PolicyChoice::Convex => {
            let c = convex_default_policy(problem, sampling)?;
            let meta = json!({
                "kind": "convex", "sigma": c.sigma, "tau": 1.0, "b": c.b,
                "halvings": c.halvings, "certificate_min_eig": c.certificate,
            });
            (StepPolicy::Convex(c), meta)
        }
        PolicyChoice::Accelerated => {
            let tau0 = cfg.policy.as_ref().and_then(|p| p.tau0);
            let a = AcceleratedPolicy::new(problem, sampling, tau0)?;
            let meta = json!({
                "kind": "accelerated", "alpha": a.params.alpha, "beta": a.params.beta,
                "kappa": a.params.kappa, "tau0": a.tau0, "sigma0": a.sigma_of(a.tau0), "b": a.b,
                "tau0_requested": tau0, "tau0_raised": a.tau0_raised,
                "outside_proven_regime": a.outside_proven_regime,
            });
            (StepPolicy::Accelerated(a), meta)
        }
    })
}

/// Reference from a long full-sampling run of the convex policy.
fn oracle_reference(
    problem: &ProblemSpec,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<Reference, CliError> {
    let sampling = Sampling::full(problem.d())?;
    let policy = StepPolicy::Convex(convex_default_policy(problem, &sampling)?);
    let opts = RunOptions {
        engine: EngineKind::Rbcd,
        k_max: steps,
        trace_every: steps,
        ..Default::default()
    };
    let out = blockpd::solver::run(problem, &sampling, &policy, x0.as_slice(), &opts)?;
    let h_star = problem.penalty_h(out.x.as_slice())?;
    let psi_star = problem.eval_psi(out.x.as_slice())?;
    Ok(Reference {
        x_star: out.x,
        h_star,
        psi_star,
    })
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:e}")
    }
}

fn write_trace(path: &Path, rows: &[TraceRecord], wall: bool) -> Result<(), CliError> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    writeln!(f, "{TRACE_HEADER}")?;
    let mut w = csv::Writer::from_writer(f);
    let mut header: Vec<&str> = TRACE_COLUMNS.to_vec();
    if wall {
        header.push("wall_time");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.k.to_string(),
            fmt(r.psi_x),
            fmt(r.psi_hat),
            fmt(r.psi_w),
            fmt(r.psi_hat_gap),
            fmt(r.h_gap_x),
            fmt(r.h_gap_w),
            fmt(r.residual),
            fmt(r.kkt),
            fmt(r.tau),
            fmt(r.sigma),
            r.lyapunov.map(fmt).unwrap_or_default(),
        ];
        if wall {
            rec.push(fmt(r.wall_time));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn column(r: &TraceRecord, name: &str) -> f64 {
    match name {
        "psi_hat_gap" => r.psi_hat_gap,
        "h_gap_w" => r.h_gap_w,
        "h_gap_x" => r.h_gap_x,
        "residual" => r.residual,
        "kkt" => r.kkt,
        _ => f64::NAN,
    }
}

fn rate_summary(rows: &[TraceRecord]) -> Value {
    let mut out = serde_json::Map::new();
    for name in RATE_COLUMNS {
        let pts: Vec<(usize, f64)> = rows.iter().map(|r| (r.k, column(r, name))).collect();
        let entry = match fit_rate(&pts, None) {
            Ok(fit) => serde_json::to_value(fit).expect("plain struct"),
            Err(e) => json!({ "error": e.to_string() }),
        };
        out.insert(name.to_string(), entry);
    }
    Value::Object(out)
}

fn run_ppdlmp(
    opf: &OpfProblem,
    cfg: &RunConfig,
    rows: &mut Vec<TraceRecord>,
    start: Instant,
) -> Result<(usize, DVector<f64>, bool), CliError> {
    let mut engine = Ppdlmp::new(opf, cfg.seed)?;
    let problem = &opf.problem;
    let sigma = engine.sigma();
    let record = |e: &Ppdlmp<'_>| -> Result<TraceRecord, CliError> {
        let x = e.state.x.as_slice();
        Ok(TraceRecord {
            k: e.state.k,
            psi_x: problem.eval_psi(x)?,
            psi_hat: f64::NAN,
            psi_w: f64::NAN,
            psi_hat_gap: f64::NAN,
            h_gap_x: f64::NAN,
            h_gap_w: f64::NAN,
            residual: problem.residual(x)?.norm(),
            kkt: problem.kkt_residual(x, e.state.y.as_slice())?,
            tau: 1.0,
            sigma,
            lyapunov: None,
            wall_time: start.elapsed().as_secs_f64(),
        })
    };
    rows.push(record(&engine)?);
    let done = |r: &TraceRecord| cfg.stop_tol.is_some_and(|t| r.kkt < t);
    let mut converged = done(&rows[0]);
    while !converged && engine.state.k < cfg.k_max {
        engine.step()?;
        let k = engine.state.k;
        if k % blockpd::solver::NAN_CHECK_EVERY == 0
            && engine.state.y.iter().any(|v| !v.is_finite())
        {
            return Err(blockpd::Error::Divergence {
                k,
                last: rows.last().cloned().map(Box::new),
            }
            .into());
        }
        if k % cfg.trace_every == 0 || k == cfg.k_max {
            let r = record(&engine)?;
            converged = done(&r);
            rows.push(r);
        }
    }
    Ok((engine.state.k, engine.state.y.clone(), converged))
}

/// Runs one configured experiment and writes its output files into `out_dir`.
pub fn run_experiment(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let inst = match cfg.experiment {
        Experiment::RandomLs => build_random_ls(cfg)?,
        Experiment::Consensus => build_consensus(cfg)?,
        Experiment::ModelFit => build_model_fit(cfg)?,
        Experiment::Custom => build_custom(cfg)?,
        Experiment::Opf15 => build_opf(cfg)?,
    };
    let problem = &inst.problem;
    let sampling = build_sampling(cfg, problem.d())?;
    let (policy, policy_meta) = build_policy(cfg, problem, &sampling)?;
    let reference = match (&inst.reference, cfg.oracle_steps) {
        (Some((r, src)), _) => Some((r.clone(), *src)),
        (None, 0) => None,
        (None, steps) => Some((oracle_reference(problem, &inst.x0, steps)?, "oracle_run")),
    };
    let s0 = if cfg.experiment == Experiment::Opf15 {
        policy.initial().sigma
    } else {
        1.0
    };
    let psi_baseline = reference.as_ref().map(|(r, _)| {
        (0..problem.d())
            .map(|i| problem.block_psi(i, &r.x_star.as_slice()[problem.blocks().range(i)]))
            .collect::<Vec<f64>>()
    });
    let psi_baseline = psi_baseline.filter(|c| c.iter().all(|v| v.is_finite()));
    let mi = MiChecker::new(problem, &sampling, &policy)?.check(&policy, policy.initial())?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    let trace_path = cfg.out_dir.join("trace.csv");
    let mut rows: Vec<TraceRecord> = Vec::new();
    let outcome = match cfg.engine {
        EngineChoice::Ppdlmp => run_ppdlmp(
            inst.opf.as_ref().expect("opf15 instance"),
            cfg,
            &mut rows,
            start,
        ),
        engine => {
            let opts = RunOptions {
                engine: if engine == EngineChoice::Pda {
                    EngineKind::Pda
                } else {
                    EngineKind::Rbcd
                },
                k_max: cfg.k_max,
                trace_every: cfg.trace_every,
                kkt_tol: cfg.stop_tol,
                reference: reference.as_ref().map(|(r, _)| r.clone()),
                lyapunov: cfg.lyapunov,
                engine_opts: EngineOptions {
                    seed: cfg.seed,
                    s0,
                    recompute_every: cfg.recompute_every,
                    psi_baseline,
                },
            };
            let mut streamed = Vec::new();
            let res = run_with_callback(
                problem,
                &sampling,
                &policy,
                inst.x0.as_slice(),
                &opts,
                |r| {
                    streamed.push(r.clone());
                    false
                },
            );
            match res {
                Ok(out) => {
                    rows = out.trace;
                    Ok((out.k, out.y, out.converged))
                }
                Err(e) => {
                    rows = streamed;
                    Err(e.into())
                }
            }
        }
    };
    write_trace(&trace_path, &rows, cfg.record_wall_time)?;
    let (k, y, converged) = outcome?;

    let mut dlmp_path = None;
    if let Some(opf) = &inst.opf {
        let path = cfg.out_dir.join("dlmp.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["bus", "period", "y_p", "y_q"])?;
        for d in extract_dlmp(y.as_slice(), &opf.layout)? {
            w.write_record([
                d.bus.to_string(),
                d.period.to_string(),
                fmt(d.y_p),
                fmt(d.y_q),
            ])?;
        }
        w.flush()?;
        dlmp_path = Some(path);
    }

    let rates = rate_summary(&rows);
    let rates_path = cfg.out_dir.join("rates.json");
    std::fs::write(&rates_path, serde_json::to_string_pretty(&rates)?)?;

    let last = rows.last();
    let metadata = json!({
        "format": "blockpd-metadata v1",
        "config": cfg,
        "instance": inst.info,
        "problem": {
            "blocks": problem.d(), "dims": problem.blocks().dims(), "m": problem.m(), "q": problem.q(),
            "lambda": problem.lambdas(), "lipschitz": problem.lipschitz(), "mu": problem.mus(),
        },
        "sampling": {
            "kind": format!("{:?}", sampling.kind()), "pi": sampling.pi(),
            "prob_matrix_min_eig": sampling.prob_matrix_min_eig(),
        },
        "policy": policy_meta,
        "engine_s0": s0,
        "initial_certificate": { "mi1_min_eig": mi.mi1, "mi2_min": mi.mi2 },
        "reference": reference.as_ref().map(|(r, src)| json!({
            "source": src, "h_star": r.h_star, "psi_star": r.psi_star,
        })),
        "result": {
            "k": k, "converged": converged,
            "final_kkt": last.map(|r| r.kkt), "final_residual": last.map(|r| r.residual),
            "wall_time_s": start.elapsed().as_secs_f64(),
        },
    });
    let meta_path = cfg.out_dir.join("metadata.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&metadata)?)?;
    Ok(Artifacts {
        trace: trace_path,
        metadata: meta_path,
        rates: rates_path,
        dlmp: dlmp_path,
        final_k: k,
        converged,
    })
}
