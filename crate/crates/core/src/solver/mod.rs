//! Iteration engines, the run loop and convergence diagnostics.
//!
//! [`Rbcd`] runs the (x, w, z) form with an averaged iterate w and the
//! incremental objective estimate Ψ̂. [`Pda`] runs the equivalent (x, u, y)
//! primal-dual form. Both draw block activations from the same ChaCha8
//! stream, so shared seeds give matching iterates.

mod diagnostics;
mod pda;
mod rbcd;

pub use diagnostics::{
    gamma_coefficients, martingale_slack, prox_inequality_slack, GammaTable, MiChecker,
};
pub use pda::{Pda, PdaState};
pub use rbcd::{Rbcd, RbcdState};

use std::time::Instant;

use nalgebra::DVector;

use crate::block_model::ProblemSpec;
use crate::error::{Error, Result};
use crate::sampling::Sampling;
use crate::stepsize::StepPolicy;

/// Interval (in iterations) of the NaN/Inf guard.
pub const NAN_CHECK_EVERY: usize = 100;

/// Engine construction options.
#[derive(Debug, Clone)]
pub struct EngineOptions {
    pub seed: u64,
    /// S₀; S_{−1} = S₀ − σ₀ so that S_k = S_{k−1} + σ_k holds from k = 0.
    pub s0: f64,
    /// Full recomputation interval of the cached products Ax, Aw (or u).
    pub recompute_every: usize,
    /// Optional per-block constants cᵢ subtracted inside the Ψ̂ recursion.
    pub psi_baseline: Option<Vec<f64>>,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            s0: 1.0,
            recompute_every: 1000,
            psi_baseline: None,
        }
    }
}

/// Reference solution used by the diagnostics.
#[derive(Debug, Clone)]
pub struct Reference {
    /// A point of argmin h.
    pub x_star: DVector<f64>,
    pub h_star: f64,
    pub psi_star: f64,
}

/// prox_{rᵢ}^{qI}(xᵢ − (∇φᵢ(xᵢ) + coupling)/q).
pub(crate) fn forward_backward(
    problem: &ProblemSpec,
    i: usize,
    xi: &[f64],
    coupling: &[f64],
    q: f64,
) -> Result<DVector<f64>> {
    let n = xi.len();
    let mut grad = vec![0.0; n];
    problem.smooth(i).grad(xi, &mut grad);
    let v: Vec<f64> = (0..n)
        .map(|j| xi[j] - (grad[j] + coupling[j]) / q)
        .collect();
    let mut out = DVector::zeros(n);
    problem.prox(i).prox(&vec![q; n], &v, out.as_mut_slice())?;
    Ok(out)
}

/// One row of the convergence trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub psi_x: f64,
    /// Ψ̂ₖ (NaN for the primal-dual engine).
    pub psi_hat: f64,
    /// Ψ(wᵏ) (NaN for the primal-dual engine).
    pub psi_w: f64,
    /// Ψ̂ₖ − Ψ* (NaN without a reference).
    pub psi_hat_gap: f64,
    pub h_gap_x: f64,
    pub h_gap_w: f64,
    /// ‖Axᵏ − b‖₂.
    pub residual: f64,
    pub kkt: f64,
    pub tau: f64,
    pub sigma: f64,
    pub lyapunov: Option<f64>,
    /// Seconds since the start of the run.
    pub wall_time: f64,
}

/// Engine form selected for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineKind {
    Rbcd,
    Pda,
}

/// Run-loop options.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub engine: EngineKind,
    pub k_max: usize,
    pub trace_every: usize,
    /// Stop once the KKT residual at a trace point falls below this value.
    pub kkt_tol: Option<f64>,
    pub reference: Option<Reference>,
    /// Record V_k in the trace (requires a reference).
    pub lyapunov: bool,
    pub engine_opts: EngineOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            engine: EngineKind::Rbcd,
            k_max: 1000,
            trace_every: 10,
            kkt_tol: None,
            reference: None,
            lyapunov: false,
            engine_opts: EngineOptions::default(),
        }
    }
}

/// Final iterates and trace of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub k: usize,
    pub x: DVector<f64>,
    /// Averaged iterate (RBCD only).
    pub w: Option<DVector<f64>>,
    pub y: DVector<f64>,
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
}

enum Engine<'a> {
    Rbcd(Box<Rbcd<'a>>),
    Pda(Box<Pda<'a>>),
}

impl Engine<'_> {
    fn k(&self) -> usize {
        match self {
            Engine::Rbcd(e) => e.state.k,
            Engine::Pda(e) => e.state.k,
        }
    }

    fn step(&mut self) -> Result<()> {
        match self {
            Engine::Rbcd(e) => e.step().map(|_| ()),
            Engine::Pda(e) => e.step().map(|_| ()),
        }
    }

    fn finite(&self) -> bool {
        match self {
            Engine::Rbcd(e) => e
                .state
                .x
                .iter()
                .chain(e.state.w.iter())
                .all(|v| v.is_finite()),
            Engine::Pda(e) => e
                .state
                .x
                .iter()
                .chain(e.state.y.iter())
                .all(|v| v.is_finite()),
        }
    }

    fn record(
        &self,
        problem: &ProblemSpec,
        opts: &RunOptions,
        start: Instant,
    ) -> Result<TraceRecord> {
        let nan = f64::NAN;
        let (x, y, step) = match self {
            Engine::Rbcd(e) => (&e.state.x, e.dual(), e.state.step),
            Engine::Pda(e) => (&e.state.x, e.state.y.clone(), e.state.step),
        };
        let residual = problem.residual(x.as_slice())?.norm();
        let kkt = problem.kkt_residual(x.as_slice(), y.as_slice())?;
        let psi_x = problem.eval_psi(x.as_slice())?;
        let mut rec = TraceRecord {
            k: self.k(),
            psi_x,
            psi_hat: nan,
            psi_w: nan,
            psi_hat_gap: nan,
            h_gap_x: nan,
            h_gap_w: nan,
            residual,
            kkt,
            tau: step.tau,
            sigma: step.sigma,
            lyapunov: None,
            wall_time: start.elapsed().as_secs_f64(),
        };
        match self {
            Engine::Rbcd(e) => {
                rec.psi_hat = e.state.psi_hat();
                rec.psi_w = problem.eval_psi(e.state.w.as_slice())?;
                if let Some(r) = &opts.reference {
                    let (gx, gw) = e.h_gaps(r)?;
                    rec.h_gap_x = gx;
                    rec.h_gap_w = gw;
                    let base: f64 = opts
                        .engine_opts
                        .psi_baseline
                        .as_ref()
                        .map_or(0.0, |c| c.iter().sum());
                    rec.psi_hat_gap = e.state.psi_hat_relative() + (base - r.psi_star);
                    if opts.lyapunov {
                        rec.lyapunov = Some(e.lyapunov(r)?.0);
                    }
                }
            }
            Engine::Pda(_) => {
                if let Some(r) = &opts.reference {
                    let d = x - &r.x_star;
                    rec.h_gap_x = 0.5 * problem.apply_a(d.as_slice())?.norm_squared();
                }
            }
        }
        Ok(rec)
    }
}

/// Runs the selected engine for `k_max` iterations or until the KKT tolerance is met.
pub fn run(
    problem: &ProblemSpec,
    sampling: &Sampling,
    policy: &StepPolicy,
    x0: &[f64],
    opts: &RunOptions,
) -> Result<RunOutput> {
    run_with_callback(problem, sampling, policy, x0, opts, |_| false)
}

/// [`run`] with a callback invoked on each trace row; returning `true` stops the run.
pub fn run_with_callback<F>(
    problem: &ProblemSpec,
    sampling: &Sampling,
    policy: &StepPolicy,
    x0: &[f64],
    opts: &RunOptions,
    mut stop: F,
) -> Result<RunOutput>
where
    F: FnMut(&TraceRecord) -> bool,
{
    if opts.trace_every == 0 {
        return Err(Error::Policy("trace interval must be positive".into()));
    }
    let start = Instant::now();
    let mut engine = match opts.engine {
        EngineKind::Rbcd => Engine::Rbcd(Box::new(Rbcd::new(
            problem,
            sampling,
            policy,
            x0,
            &opts.engine_opts,
        )?)),
        EngineKind::Pda => Engine::Pda(Box::new(Pda::new(
            problem,
            sampling,
            policy,
            x0,
            &opts.engine_opts,
        )?)),
    };
    let mut trace = vec![engine.record(problem, opts, start)?];
    let mut converged = opts.kkt_tol.is_some_and(|t| trace[0].kkt < t);
    while !converged && engine.k() < opts.k_max {
        engine.step()?;
        let k = engine.k();
        if (k % NAN_CHECK_EVERY == 0 || k == opts.k_max) && !engine.finite() {
            return Err(Error::Divergence {
                k,
                last: trace.last().cloned().map(Box::new),
            });
        }
        if k % opts.trace_every == 0 || k == opts.k_max {
            let rec = engine.record(problem, opts, start)?;
            if !rec.psi_x.is_finite() && rec.psi_x.is_nan() {
                return Err(Error::Divergence {
                    k,
                    last: trace.last().cloned().map(Box::new),
                });
            }
            converged = opts.kkt_tol.is_some_and(|t| rec.kkt < t);
            let halt = stop(&rec);
            trace.push(rec);
            if halt {
                break;
            }
        }
    }
    Ok(match engine {
        Engine::Rbcd(e) => RunOutput {
            k: e.state.k,
            y: e.dual(),
            x: e.state.x.clone(),
            w: Some(e.state.w.clone()),
            trace,
            converged,
        },
        Engine::Pda(e) => RunOutput {
            k: e.state.k,
            x: e.state.x.clone(),
            w: None,
            y: e.state.y.clone(),
            trace,
            converged,
        },
    })
}
