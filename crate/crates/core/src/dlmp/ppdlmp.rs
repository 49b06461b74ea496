//! Pair-sampled price loop between the DSO and the load aggregators.
//!
//! Each iteration the DSO takes a prox step, one aggregator drawn uniformly
//! takes a prox step and reports its bid sᵏ = A_a(x_a^{k+1} − x_aᵏ), and the
//! DSO updates prices with the locally maintained aggregate v.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::opf::OpfProblem;
use crate::error::Result;
use crate::linalg;
use crate::sampling::Sampling;
use crate::solver::{EngineOptions, Pda};
use crate::stepsize::{convex_default_policy, ConvexPolicy, StepPolicy};

/// Iterates of the price loop.
#[derive(Debug, Clone)]
pub struct PpdlmpState {
    pub k: usize,
    pub x: DVector<f64>,
    /// Prices (duals of the balance rows).
    pub y: DVector<f64>,
    /// v = σ Σ_a (A_a x_a − b_a).
    pub v: DVector<f64>,
    /// Aggregator drawn in the last iteration.
    pub last_aggregator: Option<usize>,
}

/// DSO/aggregator loop with constant coupling σ and metrics B from the convex policy.
#[derive(Debug, Clone)]
pub struct Ppdlmp<'a> {
    opf: &'a OpfProblem,
    sampling: Sampling,
    policy: StepPolicy,
    rng: ChaCha8Rng,
    pub state: PpdlmpState,
}

impl<'a> Ppdlmp<'a> {
    /// Starts from the problem's feasible point with the certified default policy.
    pub fn new(opf: &'a OpfProblem, seed: u64) -> Result<Self> {
        let sampling = Sampling::paired_dso(opf.p())?;
        let policy = convex_default_policy(&opf.problem, &sampling)?;
        Self::with_policy(opf, policy, seed, opf.x0.as_slice())
    }

    pub fn with_policy(
        opf: &'a OpfProblem,
        policy: ConvexPolicy,
        seed: u64,
        x0: &[f64],
    ) -> Result<Self> {
        let sampling = Sampling::paired_dso(opf.p())?;
        let problem = &opf.problem;
        let sigma = policy.sigma;
        let mut v = DVector::zeros(problem.q());
        for a in 1..problem.d() {
            linalg::gemv_add(
                v.as_mut_slice(),
                sigma,
                problem.a_block(a),
                &x0[problem.blocks().range(a)],
            );
        }
        let mut y = v.clone();
        linalg::gemv_add(
            y.as_mut_slice(),
            sigma,
            problem.a_block(0),
            &x0[problem.blocks().range(0)],
        );
        y.axpy(-sigma, problem.b(), 1.0);
        Ok(Self {
            opf,
            sampling,
            policy: StepPolicy::Convex(policy),
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: PpdlmpState {
                k: 0,
                x: DVector::from_column_slice(x0),
                y,
                v,
                last_aggregator: None,
            },
        })
    }

    pub fn sigma(&self) -> f64 {
        self.policy.initial().sigma
    }

    pub fn sampling(&self) -> &Sampling {
        &self.sampling
    }

    pub fn policy(&self) -> &StepPolicy {
        &self.policy
    }

    fn prox_block(&self, i: usize, scale: f64) -> Result<DVector<f64>> {
        let problem = &self.opf.problem;
        let range = problem.blocks().range(i);
        let mut coupling = vec![0.0; range.len()];
        linalg::gemv_tr(&mut coupling, problem.a_block(i), self.state.y.as_slice());
        let q = self.policy.metric_b()[i] * scale;
        crate::solver::forward_backward(problem, i, &self.state.x.as_slice()[range], &coupling, q)
    }

    /// One iteration; returns the aggregator block that was drawn.
    pub fn step(&mut self) -> Result<usize> {
        let problem = &self.opf.problem;
        let p = self.opf.p();
        let sigma = self.sigma();
        let a = self.sampling.draw(&mut self.rng).indices()[1];
        let x0_new = self.prox_block(0, 1.0)?;
        let xa_new = self.prox_block(a, p as f64)?;

        let st = &mut self.state;
        let r0 = problem.blocks().range(0);
        let ra = problem.blocks().range(a);
        let two_x0: Vec<f64> = x0_new
            .iter()
            .zip(&st.x.as_slice()[r0.clone()])
            .map(|(n, o)| 2.0 * n - o)
            .collect();
        let da: Vec<f64> = xa_new
            .iter()
            .zip(&st.x.as_slice()[ra.clone()])
            .map(|(n, o)| n - o)
            .collect();
        let mut s = vec![0.0; problem.q()];
        linalg::gemv_add(&mut s, 1.0, problem.a_block(a), &da);

        let mut dso = vec![0.0; problem.q()];
        linalg::gemv_add(&mut dso, 1.0, problem.a_block(0), &two_x0);
        for r in 0..problem.q() {
            st.y[r] +=
                sigma * (dso[r] - problem.b()[r]) + sigma * (p as f64 + 1.0) * s[r] + st.v[r];
            st.v[r] += sigma * s[r];
        }
        st.x.rows_mut(r0.start, r0.len()).copy_from(&x0_new);
        st.x.rows_mut(ra.start, ra.len()).copy_from(&xa_new);
        st.k += 1;
        st.last_aggregator = Some(a);
        Ok(a)
    }
}

/// Runs the price loop next to the generic primal-dual engine under the same
/// seed and returns the largest deviation of (x, y) over `steps` iterations.
pub fn twin_run(opf: &OpfProblem, seed: u64, steps: usize) -> Result<f64> {
    let mut loop_ = Ppdlmp::new(opf, seed)?;
    let sampling = loop_.sampling().clone();
    let policy = loop_.policy().clone();
    let opts = EngineOptions {
        seed,
        s0: loop_.sigma(),
        ..Default::default()
    };
    let mut pda = Pda::new(&opf.problem, &sampling, &policy, opf.x0.as_slice(), &opts)?;
    let mut worst = (&loop_.state.y - &pda.state.y).amax();
    for _ in 0..steps {
        loop_.step()?;
        pda.step()?;
        worst = worst
            .max((&loop_.state.x - &pda.state.x).amax())
            .max((&loop_.state.y - &pda.state.y).amax());
    }
    Ok(worst)
}
