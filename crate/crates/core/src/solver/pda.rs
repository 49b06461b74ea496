//! Primal-dual engine in the (x, u, y) form.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{forward_backward, EngineOptions};
use crate::block_model::ProblemSpec;
use crate::error::Result;
use crate::linalg;
use crate::sampling::{Activation, Sampling};
use crate::stepsize::{StepPolicy, StepState};

/// Iterates of the primal-dual engine at iteration k.
#[derive(Debug, Clone)]
pub struct PdaState {
    pub k: usize,
    pub x: DVector<f64>,
    /// uᵏ = Axᵏ − b.
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    /// (τₖ, σₖ).
    pub step: StepState,
}

/// Engine running the (x, u, y) iteration; shares the RNG protocol of [`super::Rbcd`].
#[derive(Debug, Clone)]
pub struct Pda<'a> {
    problem: &'a ProblemSpec,
    sampling: &'a Sampling,
    policy: &'a StepPolicy,
    rng: ChaCha8Rng,
    recompute_every: usize,
    pub state: PdaState,
}

impl<'a> Pda<'a> {
    /// Starts from y⁰ = S₀(Ax⁰ − b), u⁰ = Ax⁰ − b.
    pub fn new(
        problem: &'a ProblemSpec,
        sampling: &'a Sampling,
        policy: &'a StepPolicy,
        x0: &[f64],
        opts: &EngineOptions,
    ) -> Result<Self> {
        let step = policy.initial();
        let baseline = super::rbcd::check_setup(problem, sampling, x0, opts, step.sigma)?;
        super::rbcd::initial_psi(problem, x0, &baseline)?;
        let u = problem.residual(x0)?;
        let y = &u * opts.s0;
        Ok(Self {
            problem,
            sampling,
            policy,
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            recompute_every: opts.recompute_every,
            state: PdaState {
                k: 0,
                x: DVector::from_column_slice(x0),
                u,
                y,
                step,
            },
        })
    }

    pub fn q_scalar(&self, i: usize) -> f64 {
        self.policy.metric_b()[i] / (self.sampling.pi()[i] * self.state.step.tau)
    }

    pub fn step(&mut self) -> Result<Activation> {
        let act = self.sampling.draw(&mut self.rng);
        self.step_with(&act)?;
        Ok(act)
    }

    /// xᵢ ← prox(xᵢ − Qᵢ⁻¹(∇φᵢ + Aᵢᵀy)), u ← u + AΔx, y ← y + σₖAPΔx + σ_{k+1}u.
    pub fn step_with(&mut self, act: &Activation) -> Result<()> {
        let problem = self.problem;
        let pi = self.sampling.pi();
        let q = problem.q();
        let mut du = vec![0.0; q];
        let mut dpu = vec![0.0; q];
        let mut updates = Vec::with_capacity(act.indices().len());
        for &i in act.indices() {
            let range = problem.blocks().range(i);
            let mut coupling = vec![0.0; range.len()];
            linalg::gemv_tr(&mut coupling, problem.a_block(i), self.state.y.as_slice());
            let xhat = forward_backward(
                problem,
                i,
                &self.state.x.as_slice()[range],
                &coupling,
                self.q_scalar(i),
            )?;
            updates.push((i, xhat));
        }
        let next = self.policy.advance(self.state.step)?;
        let st = &mut self.state;
        for (i, xhat) in updates {
            let range = problem.blocks().range(i);
            let delta: Vec<f64> = xhat
                .iter()
                .zip(&st.x.as_slice()[range.clone()])
                .map(|(a, b)| a - b)
                .collect();
            for (j, dj) in range.zip(&delta) {
                st.x[j] += dj;
            }
            linalg::gemv_add(&mut du, 1.0, problem.a_block(i), &delta);
            linalg::gemv_add(&mut dpu, 1.0 / pi[i], problem.a_block(i), &delta);
        }
        for r in 0..q {
            st.u[r] += du[r];
        }
        st.k += 1;
        if st.k % self.recompute_every == 0 {
            st.u = problem.residual(st.x.as_slice())?;
        }
        for r in 0..q {
            st.y[r] += st.step.sigma * dpu[r] + next.sigma * st.u[r];
        }
        st.step = next;
        Ok(())
    }
}
