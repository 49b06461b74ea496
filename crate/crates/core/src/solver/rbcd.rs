//! Randomized block-coordinate engine in the (x, w, z) form.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{forward_backward, EngineOptions, Reference};
use crate::block_model::ProblemSpec;
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::sampling::{Activation, Sampling};
use crate::stepsize::{StepPolicy, StepState};

/// Iterates and bookkeeping of the (x, w, z) engine at iteration k.
#[derive(Debug, Clone)]
pub struct RbcdState {
    pub k: usize,
    pub x: DVector<f64>,
    pub w: DVector<f64>,
    /// S_{k−1}.
    pub s_prev: f64,
    /// S_k.
    pub s: f64,
    /// (τₖ, σₖ).
    pub step: StepState,
    ax: DVector<f64>,
    aw: DVector<f64>,
    /// ψᵢ(xᵢᵏ) − cᵢ per block.
    psi_blocks: Vec<f64>,
    baseline: Vec<f64>,
    /// Ψ̂ₖ − Σᵢ cᵢ.
    psi_hat_rel: f64,
}

impl RbcdState {
    /// Ψ̂ₖ = Σₜ Σᵢ γᵢ^{k,t} ψᵢ(xᵢᵗ).
    pub fn psi_hat(&self) -> f64 {
        self.psi_hat_rel + self.baseline.iter().sum::<f64>()
    }

    /// Ψ̂ₖ − Σᵢ cᵢ, free of the cancellation in Ψ̂ₖ − Ψ* when cᵢ = ψᵢ(xᵢ*).
    pub fn psi_hat_relative(&self) -> f64 {
        self.psi_hat_rel
    }

    /// θₖ = σₖ / S_k.
    pub fn theta(&self) -> f64 {
        self.step.sigma / self.s
    }

    /// Cached A xᵏ.
    pub fn ax(&self) -> &DVector<f64> {
        &self.ax
    }

    /// Cached A wᵏ.
    pub fn aw(&self) -> &DVector<f64> {
        &self.aw
    }
}

/// Engine running the (x, w, z) iteration with incremental A-products.
#[derive(Debug, Clone)]
pub struct Rbcd<'a> {
    problem: &'a ProblemSpec,
    sampling: &'a Sampling,
    policy: &'a StepPolicy,
    rng: ChaCha8Rng,
    recompute_every: usize,
    pub state: RbcdState,
}

pub(crate) fn initial_psi(problem: &ProblemSpec, x0: &[f64], baseline: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(problem.d());
    for i in 0..problem.d() {
        let v = problem.block_psi(i, &x0[problem.blocks().range(i)]);
        if !v.is_finite() {
            return Err(Error::Domain(format!("x⁰ lies outside dom ψ on block {i}")));
        }
        out.push(v - baseline[i]);
    }
    Ok(out)
}

pub(crate) fn check_setup(
    problem: &ProblemSpec,
    sampling: &Sampling,
    x0: &[f64],
    opts: &EngineOptions,
    sigma0: f64,
) -> Result<Vec<f64>> {
    check_len("sampling block count", problem.d(), sampling.d())?;
    check_len("initial point", problem.m(), x0.len())?;
    if opts.s0 < sigma0 * (1.0 - 1e-12) {
        return Err(Error::Policy(format!(
            "S₀ = {} is smaller than σ₀ = {sigma0}",
            opts.s0
        )));
    }
    if opts.recompute_every == 0 {
        return Err(Error::Policy("recompute interval must be positive".into()));
    }
    let baseline = opts
        .psi_baseline
        .clone()
        .unwrap_or_else(|| vec![0.0; problem.d()]);
    check_len("Ψ baseline", problem.d(), baseline.len())?;
    Ok(baseline)
}

impl<'a> Rbcd<'a> {
    pub fn new(
        problem: &'a ProblemSpec,
        sampling: &'a Sampling,
        policy: &'a StepPolicy,
        x0: &[f64],
        opts: &EngineOptions,
    ) -> Result<Self> {
        let step = policy.initial();
        let baseline = check_setup(problem, sampling, x0, opts, step.sigma)?;
        let psi_blocks = initial_psi(problem, x0, &baseline)?;
        let x = DVector::from_column_slice(x0);
        let ax = problem.apply_a(x0)?;
        let psi_hat_rel = psi_blocks.iter().sum();
        Ok(Self {
            problem,
            sampling,
            policy,
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            recompute_every: opts.recompute_every,
            state: RbcdState {
                k: 0,
                w: x.clone(),
                x,
                s_prev: opts.s0 - step.sigma,
                s: opts.s0,
                step,
                aw: ax.clone(),
                ax,
                psi_blocks,
                baseline,
                psi_hat_rel,
            },
        })
    }

    pub fn problem(&self) -> &'a ProblemSpec {
        self.problem
    }

    pub fn sampling(&self) -> &'a Sampling {
        self.sampling
    }

    pub fn policy(&self) -> &'a StepPolicy {
        self.policy
    }

    /// zᵏ = (S_{k−1}wᵏ + σₖxᵏ)/S_k.
    pub fn z(&self) -> DVector<f64> {
        let st = &self.state;
        (&st.w * st.s_prev + &st.x * st.step.sigma) / st.s
    }

    fn az(&self) -> DVector<f64> {
        let st = &self.state;
        (&st.aw * st.s_prev + &st.ax * st.step.sigma) / st.s
    }

    /// Dual estimate yᵏ = S_k(Azᵏ − b).
    pub fn dual(&self) -> DVector<f64> {
        (self.az() - self.problem.b()) * self.state.s
    }

    /// Scalar of the block metric Qᵢᵏ = Bᵢ/(πᵢτₖ).
    pub fn q_scalar(&self, i: usize) -> f64 {
        self.policy.metric_b()[i] / (self.sampling.pi()[i] * self.state.step.tau)
    }

    fn fb_with_residual(&self, i: usize, resid: &DVector<f64>) -> Result<DVector<f64>> {
        let range = self.problem.blocks().range(i);
        let mut coupling = vec![0.0; range.len()];
        linalg::gemv_tr(&mut coupling, self.problem.a_block(i), resid.as_slice());
        for c in &mut coupling {
            *c *= self.state.s;
        }
        forward_backward(
            self.problem,
            i,
            &self.state.x.as_slice()[range],
            &coupling,
            self.q_scalar(i),
        )
    }

    /// x̂ᵢ^{k+1} = prox_{rᵢ}^{Qᵢᵏ}(xᵢᵏ − (Qᵢᵏ)⁻¹gᵢᵏ), gᵢᵏ = ∇φᵢ(xᵢᵏ) + S_k Aᵢᵀ(Azᵏ − b).
    pub fn forward_backward_block(&self, i: usize) -> Result<DVector<f64>> {
        let resid = self.az() - self.problem.b();
        self.fb_with_residual(i, &resid)
    }

    /// x̂^{k+1} over every block.
    pub fn full_forward_backward(&self) -> Result<DVector<f64>> {
        let resid = self.az() - self.problem.b();
        let mut out = DVector::zeros(self.problem.m());
        for i in 0..self.problem.d() {
            let range = self.problem.blocks().range(i);
            out.rows_mut(range.start, range.len())
                .copy_from(&self.fb_with_residual(i, &resid)?);
        }
        Ok(out)
    }

    /// Draws ι_k and performs one iteration.
    pub fn step(&mut self) -> Result<Activation> {
        let act = self.sampling.draw(&mut self.rng);
        self.step_with(&act)?;
        Ok(act)
    }

    /// One iteration with a prescribed activation.
    pub fn step_with(&mut self, act: &Activation) -> Result<()> {
        let problem = self.problem;
        let pi = self.sampling.pi();
        let theta = self.state.theta();
        let az = self.az();
        let resid = &az - problem.b();

        let mut updates = Vec::with_capacity(act.indices().len());
        for &i in act.indices() {
            let xhat = self.fb_with_residual(i, &resid)?;
            let psi_new = problem.block_psi(i, xhat.as_slice()) - self.state.baseline[i];
            updates.push((i, xhat, psi_new));
        }

        let next = self.policy.advance(self.state.step)?;
        let st = &mut self.state;
        let old_sum: f64 = st.psi_blocks.iter().sum();
        let inc: f64 = updates
            .iter()
            .map(|(i, _, new)| (new - st.psi_blocks[*i]) / pi[*i])
            .sum();
        st.psi_hat_rel = (1.0 - theta) * st.psi_hat_rel + theta * (old_sum + inc);

        st.w = (&st.w * st.s_prev + &st.x * st.step.sigma) / st.s;
        st.aw = az;
        for (i, xhat, psi_new) in updates {
            let range = problem.blocks().range(i);
            let delta: Vec<f64> = xhat
                .iter()
                .zip(&st.x.as_slice()[range.clone()])
                .map(|(a, b)| a - b)
                .collect();
            let scale = theta / pi[i];
            for (j, dj) in range.clone().zip(&delta) {
                st.x[j] += dj;
                st.w[j] += scale * dj;
            }
            linalg::gemv_add(st.ax.as_mut_slice(), 1.0, problem.a_block(i), &delta);
            linalg::gemv_add(st.aw.as_mut_slice(), scale, problem.a_block(i), &delta);
            st.psi_blocks[i] = psi_new;
        }

        st.s_prev = st.s;
        st.s += next.sigma;
        st.step = next;
        st.k += 1;
        if st.k % self.recompute_every == 0 {
            st.ax = problem.apply_a(st.x.as_slice())?;
            st.aw = problem.apply_a(st.w.as_slice())?;
        }
        Ok(())
    }

    /// h(xᵏ) − h* and h(wᵏ) − h* as ½‖A(· − x*)‖².
    pub fn h_gaps(&self, reference: &Reference) -> Result<(f64, f64)> {
        let ax_star = self.problem.apply_a(reference.x_star.as_slice())?;
        let gx = 0.5 * (&self.state.ax - &ax_star).norm_squared();
        let gw = 0.5 * (&self.state.aw - &ax_star).norm_squared();
        Ok((gx, gw))
    }

    /// Per-coordinate diagonal of W_k = (σₖ/τₖ)P²B + σₖ(P − I)Υ.
    pub fn w_metric(&self) -> DVector<f64> {
        let blocks = self.problem.blocks();
        let StepState { tau, sigma } = self.state.step;
        let mut out = DVector::zeros(blocks.m());
        for i in 0..blocks.d() {
            let p = 1.0 / self.sampling.pi()[i];
            let mu = self.problem.prox(i).mu();
            let bi = self.policy.metric_b()[i];
            for j in blocks.range(i) {
                out[j] = sigma / tau * p * p * bi + sigma * (p - 1.0) * mu;
            }
        }
        out
    }

    /// (V_k, F_k) with F_k = Ψ̂ₖ + S_{k−1}(h(wᵏ) − h*) and
    /// V_k = ½‖xᵏ − x*‖²_{W_k} + S_{k−1}(F_k − Ψ(x*)).
    pub fn lyapunov(&self, reference: &Reference) -> Result<(f64, f64)> {
        let (_, gw) = self.h_gaps(reference)?;
        let st = &self.state;
        let f = st.psi_hat() + st.s_prev * gw;
        let wm = self.w_metric();
        let dist: f64 = (0..self.problem.m())
            .map(|j| wm[j] * (st.x[j] - reference.x_star[j]).powi(2))
            .sum();
        // (F − Ψ*) evaluated on the baseline-relative scale to limit cancellation
        let base: f64 = st.baseline.iter().sum();
        let f_minus = st.psi_hat_rel + (base - reference.psi_star) + st.s_prev * gw;
        Ok((0.5 * dist + st.s_prev * f_minus, f))
    }

    /// ζᵏ(x) = Φ(xᵏ) + ⟨∇Φ(xᵏ), x − xᵏ⟩ + S_k⟨∇h(zᵏ), x − zᵏ⟩ + ½‖x − xᵏ‖²_{Qᵏ}.
    pub fn zeta(&self, x: &[f64]) -> Result<f64> {
        check_len("ζ argument", self.problem.m(), x.len())?;
        let problem = self.problem;
        let st = &self.state;
        let z = self.z();
        let grad_phi = problem.grad_phi(st.x.as_slice())?;
        let resid = self.az() - problem.b();
        let grad_h = problem.apply_at(resid.as_slice())?;
        let mut phi = 0.0;
        let mut quad = 0.0;
        for i in 0..problem.d() {
            let range = problem.blocks().range(i);
            phi += problem.smooth(i).value(&st.x.as_slice()[range.clone()]);
            let q = self.q_scalar(i);
            for j in range {
                quad += q * (x[j] - st.x[j]).powi(2);
            }
        }
        let mut lin = 0.0;
        let mut pen = 0.0;
        for j in 0..problem.m() {
            lin += grad_phi[j] * (x[j] - st.x[j]);
            pen += grad_h[j] * (x[j] - z[j]);
        }
        Ok(phi + lin + st.s * pen + 0.5 * quad)
    }

    /// R(x) = Σᵢ rᵢ(xᵢ).
    pub fn r_value(&self, x: &[f64]) -> f64 {
        (0..self.problem.d())
            .map(|i| {
                self.problem
                    .prox(i)
                    .value(&x[self.problem.blocks().range(i)])
            })
            .sum()
    }

    /// Diagonal of Qᵏ + Υ over coordinates.
    pub fn q_plus_upsilon(&self) -> DVector<f64> {
        let blocks = self.problem.blocks();
        let mut out = DVector::zeros(blocks.m());
        for i in 0..blocks.d() {
            let v = self.q_scalar(i) + self.problem.prox(i).mu();
            for j in blocks.range(i) {
                out[j] = v;
            }
        }
        out
    }
}
