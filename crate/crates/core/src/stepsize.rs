//! Step-size policies.
//!
//! The convex policy keeps τ ≡ 1 and a constant σ certified against
//! PB ⪰ σΞ + Λ. The accelerated policy couples σₖτₖ = α − βτₖ and advances
//! τ through the positive root of the per-block quadratic that keeps the
//! variable metric of the Lyapunov function non-increasing.

use nalgebra::{DMatrix, DVector};

use crate::block_model::ProblemSpec;
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::sampling::Sampling;

/// Eigenvalue slack accepted by every matrix-inequality certificate.
pub const MI_TOL: f64 = 1e-8;
/// Agreement required between the two τ-recursion evaluations.
pub const TAU_PATH_TOL: f64 = 1e-10;
const SIGMA_FLOOR: f64 = 1e-12;
const B_FLOOR: f64 = 1e-12;

/// (τₖ, σₖ) at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepState {
    pub tau: f64,
    pub sigma: f64,
}

/// Constant σ with τ ≡ 1 and per-block scalar metrics Bᵢ = bᵢ I.
#[derive(Debug, Clone)]
pub struct ConvexPolicy {
    pub sigma: f64,
    pub b: Vec<f64>,
    /// Number of σ halvings needed to pass the certificate.
    pub halvings: usize,
    /// λ_min(PB − σΞ − Λ) at the accepted σ.
    pub certificate: f64,
}

fn expand_blocks(problem: &ProblemSpec, per_block: &[f64]) -> DVector<f64> {
    let blocks = problem.blocks();
    let mut out = DVector::zeros(blocks.m());
    for i in 0..blocks.d() {
        for j in blocks.range(i) {
            out[j] = per_block[i];
        }
    }
    out
}

/// λ_min(PB − σΞ − Λ).
pub fn convex_certificate(
    problem: &ProblemSpec,
    sampling: &Sampling,
    xi: &DMatrix<f64>,
    b: &[f64],
    sigma: f64,
) -> Result<f64> {
    let pdiag = sampling.weight_diag(problem.blocks())?;
    let bdiag = expand_blocks(problem, b);
    let mut mat = -(xi * sigma) - problem.lambda_full();
    for j in 0..problem.m() {
        mat[(j, j)] += pdiag[j] * bdiag[j];
    }
    Ok(linalg::min_eig(&mat))
}

/// Bᵢ = πᵢ(λᵢ + Lᵢ) I and σ = min πᵢ, halved until PB ⪰ σΞ + Λ holds.
pub fn convex_default_policy(problem: &ProblemSpec, sampling: &Sampling) -> Result<ConvexPolicy> {
    check_len("sampling block count", problem.d(), sampling.d())?;
    let lips = problem.lipschitz();
    let b: Vec<f64> = (0..problem.d())
        .map(|i| sampling.pi()[i] * (problem.lambdas()[i] + lips[i]).max(B_FLOOR))
        .collect();
    let xi = sampling.xi_matrix(problem.blocks(), &a_blocks(problem))?;
    let mut sigma = sampling.pi_min();
    let mut halvings = 0;
    loop {
        let cert = convex_certificate(problem, sampling, &xi, &b, sigma)?;
        if cert >= -MI_TOL {
            return Ok(ConvexPolicy {
                sigma,
                b,
                halvings,
                certificate: cert,
            });
        }
        sigma *= 0.5;
        halvings += 1;
        if sigma < SIGMA_FLOOR {
            return Err(Error::Policy(format!(
                "no σ ≥ {SIGMA_FLOOR:e} satisfies PB ⪰ σΞ + Λ"
            )));
        }
    }
}

/// Column blocks Aᵢ as owned matrices.
pub fn a_blocks(problem: &ProblemSpec) -> Vec<DMatrix<f64>> {
    (0..problem.d())
        .map(|i| problem.a_block(i).clone())
        .collect()
}

/// α, β and κ = β/α of the accelerated policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

/// α = λ_max(M^{-1/2} Ξ M^{-1/2})⁻¹ and β = α λ_max(M^{-1/2}(Λ + Υ)M^{-1/2}) with M = P⁻¹Υ.
pub fn accel_params(problem: &ProblemSpec, sampling: &Sampling) -> Result<AccelParams> {
    check_len("sampling block count", problem.d(), sampling.d())?;
    let ups = problem.upsilon_diag();
    if ups.iter().any(|&u| !(u > 0.0)) {
        return Err(Error::Policy(
            "accelerated policy requires μᵢ > 0 for every block".into(),
        ));
    }
    let pdiag = sampling.weight_diag(problem.blocks())?;
    let m_inv_sqrt = DVector::from_fn(problem.m(), |j, _| (pdiag[j] / ups[j]).sqrt());
    let scale = |mat: &DMatrix<f64>| -> DMatrix<f64> {
        DMatrix::from_fn(mat.nrows(), mat.ncols(), |i, j| {
            m_inv_sqrt[i] * mat[(i, j)] * m_inv_sqrt[j]
        })
    };
    let xi = sampling.xi_matrix(problem.blocks(), &a_blocks(problem))?;
    let top_xi = linalg::max_eig(&scale(&xi));
    if !(top_xi > 0.0) {
        return Err(Error::Policy(
            "Ξ vanishes; the coupling constraint is void".into(),
        ));
    }
    let alpha = 1.0 / top_xi;
    let mut lu = problem.lambda_full();
    for j in 0..problem.m() {
        lu[(j, j)] += ups[j];
    }
    let beta = alpha * linalg::max_eig(&scale(&lu));
    Ok(AccelParams {
        alpha,
        beta,
        kappa: beta / alpha,
    })
}

/// Positive root of (1 − κτ² − δᵢτ)x² + τ²(δᵢ + 1)x − τ² = 0, maximized over blocks.
pub fn tau_next_root(tau: f64, kappa: f64, pi: &[f64]) -> Result<f64> {
    check_tau(tau, kappa)?;
    let mut best = 0.0_f64;
    for &p in pi {
        let delta = kappa - 1.0 / p;
        let a1 = 1.0 - kappa * tau * tau - delta * tau;
        let a2 = tau * tau * (delta + 1.0);
        let a3 = tau * tau;
        if !(a1 > 0.0) {
            return Err(Error::Domain(format!(
                "leading coefficient {a1} not positive at τ = {tau}"
            )));
        }
        // cancellation-free form of (−a2 + √(a2² + 4a1a3)) / (2a1)
        let root = 2.0 * a3 / (a2 + (a2 * a2 + 4.0 * a1 * a3).sqrt());
        best = best.max(root);
    }
    Ok(best)
}

/// Same update through sₖ = (1 + δ)τₖ, dₖ = 1 − δτₖ − κτₖ², s_{k+1} = 2sₖ/(sₖ + √(sₖ² + 4dₖ)).
pub fn tau_next_normalized(tau: f64, kappa: f64, pi: &[f64]) -> Result<f64> {
    check_tau(tau, kappa)?;
    let mut best = 0.0_f64;
    for &p in pi {
        let delta = kappa - 1.0 / p;
        let d = 1.0 - delta * tau - kappa * tau * tau;
        let s = (1.0 + delta) * tau;
        let s_next = 2.0 * s / (s + (s * s + 4.0 * d).sqrt());
        best = best.max(s_next / (1.0 + delta));
    }
    Ok(best)
}

fn check_tau(tau: f64, kappa: f64) -> Result<()> {
    if !(tau > 0.0 && tau * kappa < 1.0) {
        return Err(Error::Domain(format!(
            "τ = {tau} outside (0, 1/κ) with κ = {kappa}"
        )));
    }
    Ok(())
}

/// τ_{k+1}, computed along both paths and checked for agreement.
pub fn tau_next(tau: f64, kappa: f64, pi: &[f64]) -> Result<f64> {
    let a = tau_next_root(tau, kappa, pi)?;
    let b = tau_next_normalized(tau, kappa, pi)?;
    if (a - b).abs() > TAU_PATH_TOL * a.max(1.0) {
        return Err(Error::Policy(format!(
            "τ-recursion paths disagree: {a} vs {b}"
        )));
    }
    Ok(a)
}

/// 2τ₀ / ((1 + κ − 1/π)τ₀k + 2).
pub fn tau_lower_bound(k: usize, tau0: f64, kappa: f64, pi: f64) -> f64 {
    2.0 * tau0 / ((1.0 + kappa - 1.0 / pi) * tau0 * k as f64 + 2.0)
}

/// Accelerated policy state: coupling σₖ = α/τₖ − β and metric Bᵢ = πᵢ²μᵢ.
#[derive(Debug, Clone)]
pub struct AcceleratedPolicy {
    pub params: AccelParams,
    pub pi: Vec<f64>,
    pub b: Vec<f64>,
    pub tau0: f64,
    /// Set when a requested τ₀ gave σ₀ > min πᵢ and was raised.
    pub tau0_raised: bool,
    /// Set for non-uniform samplings or non-scalar Λᵢ, where the recursion is unproven.
    pub outside_proven_regime: bool,
}

impl AcceleratedPolicy {
    /// Builds the policy; `tau0 = None` picks τ₀ = α/(β + min πᵢ), i.e. σ₀ = min πᵢ.
    pub fn new(problem: &ProblemSpec, sampling: &Sampling, tau0: Option<f64>) -> Result<Self> {
        let params = accel_params(problem, sampling)?;
        let pi = sampling.pi().to_vec();
        let pi_min = sampling.pi_min();
        let admissible = params.alpha / (params.beta + pi_min);
        let (tau0, raised) = match tau0 {
            None => (admissible, false),
            Some(t) => {
                check_tau(t, params.kappa)?;
                if params.alpha / t - params.beta > pi_min {
                    (admissible, true)
                } else {
                    (t, false)
                }
            }
        };
        let mus = problem.mus();
        let b = pi.iter().zip(&mus).map(|(p, mu)| p * p * mu).collect();
        let scalar_lambda = (0..problem.d()).all(|i| {
            let l = problem.smooth(i).lambda_matrix();
            let top = l.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let diag = l[(0, 0)];
            (&l - DMatrix::identity(l.nrows(), l.ncols()) * diag).amax() <= 1e-12 * top.max(1.0)
        });
        Ok(Self {
            params,
            pi,
            b,
            tau0,
            tau0_raised: raised,
            outside_proven_regime: !sampling.is_uniform() || !scalar_lambda,
        })
    }

    pub fn sigma_of(&self, tau: f64) -> f64 {
        self.params.alpha / tau - self.params.beta
    }
}

/// Either step-size regime.
#[derive(Debug, Clone)]
pub enum StepPolicy {
    Convex(ConvexPolicy),
    Accelerated(AcceleratedPolicy),
}

impl StepPolicy {
    pub fn initial(&self) -> StepState {
        match self {
            StepPolicy::Convex(c) => StepState {
                tau: 1.0,
                sigma: c.sigma,
            },
            StepPolicy::Accelerated(a) => StepState {
                tau: a.tau0,
                sigma: a.sigma_of(a.tau0),
            },
        }
    }

    /// (τ_{k+1}, σ_{k+1}) from (τₖ, σₖ).
    pub fn advance(&self, cur: StepState) -> Result<StepState> {
        match self {
            StepPolicy::Convex(_) => Ok(cur),
            StepPolicy::Accelerated(a) => {
                let tau = tau_next(cur.tau, a.params.kappa, &a.pi)?;
                Ok(StepState {
                    tau,
                    sigma: a.sigma_of(tau),
                })
            }
        }
    }

    /// Per-block scalars bᵢ with Bᵢ = bᵢ I.
    pub fn metric_b(&self) -> &[f64] {
        match self {
            StepPolicy::Convex(c) => &c.b,
            StepPolicy::Accelerated(a) => &a.b,
        }
    }
}

/// Smallest eigenvalues of the two matrix inequalities at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiReport {
    pub mi1: f64,
    pub mi2: f64,
}

impl MiReport {
    pub fn holds(&self) -> (bool, bool) {
        (self.mi1 >= -MI_TOL, self.mi2 >= -MI_TOL)
    }
}

/// Evaluates PB ⪰ τₖ(Λ + σₖΞ) and
/// P²B + τₖPΥ ⪰ (τₖσ_{k+1}/(τ_{k+1}σₖ))(P²B − τ_{k+1}(I − P)Υ).
///
/// P, B and Υ are passed as diagonals over coordinates.
#[allow(clippy::too_many_arguments)]
pub fn certify_mi(
    lambda: &DMatrix<f64>,
    upsilon: &DVector<f64>,
    xi: &DMatrix<f64>,
    p: &DVector<f64>,
    b: &DVector<f64>,
    cur: StepState,
    next: StepState,
) -> MiReport {
    let m = p.len();
    let mut mi1 = -(lambda + xi * cur.sigma) * cur.tau;
    for j in 0..m {
        mi1[(j, j)] += p[j] * b[j];
    }
    let c = cur.tau * next.sigma / (next.tau * cur.sigma);
    let mi2 = (0..m)
        .map(|j| {
            let p2b = p[j] * p[j] * b[j];
            p2b + cur.tau * p[j] * upsilon[j] - c * (p2b - next.tau * (1.0 - p[j]) * upsilon[j])
        })
        .fold(f64::INFINITY, f64::min);
    MiReport {
        mi1: linalg::min_eig(&mi1),
        mi2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_example() {
        // κ = 1, π = 1: δ = 0; τ = 2 lies outside (0, 1/κ) so use the s-map directly
        let s0: f64 = 2.0;
        let s1 = 2.0 * s0 / (s0 + (s0 * s0 + 4.0).sqrt());
        assert!((s1 - 0.828_427_124_746_190_1).abs() < 1e-12);
    }

    #[test]
    fn two_paths_agree() {
        let a = tau_next_root(0.2, 4.0, &[0.5, 0.5]).unwrap();
        let b = tau_next_normalized(0.2, 4.0, &[0.5, 0.5]).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert!(a < 0.2);
    }

    #[test]
    fn lower_bound_examples() {
        assert_eq!(tau_lower_bound(0, 0.2, 4.0, 0.5), 0.2);
        assert!((tau_lower_bound(10, 0.2, 4.0, 0.5) - 0.05).abs() < 1e-15);
        assert!((tau_lower_bound(7, 0.3, 2.0, 0.5) - 0.6 / (0.3 * 7.0 + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn tau_domain() {
        assert!(matches!(tau_next(0.25, 4.0, &[0.5]), Err(Error::Domain(_))));
        assert!(matches!(tau_next(0.0, 4.0, &[0.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn fixed_point_at_inverse_kappa() {
        // F(x, 1/κ) = 0 at x = 1/κ: a₁ = 1 − 1/κ − δ/κ = 1 − (1 + δ)/κ with δ = κ − 1/π
        let (kappa, p): (f64, f64) = (4.0, 0.5);
        let y = 1.0 / kappa;
        let delta = kappa - 1.0 / p;
        let a1 = 1.0 - kappa * y * y - delta * y;
        let a2 = y * y * (delta + 1.0);
        let a3 = y * y;
        let x = 1.0 / kappa;
        assert!((a1 * x * x + a2 * x - a3).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tau_paths_agree_and_decrease(
                kappa in 0.01f64..2.0,
                pi in prop::collection::vec(0.05f64..1.0, 1..5),
                frac in 0.01f64..0.99,
            ) {
                let pi_min = pi.iter().cloned().fold(f64::INFINITY, f64::min);
                let mut tau = frac * pi_min.min(1.0 / kappa);
                for _ in 0..50 {
                    let a = tau_next_root(tau, kappa, &pi).unwrap();
                    let b = tau_next_normalized(tau, kappa, &pi).unwrap();
                    prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
                    prop_assert!(a < tau && a > 0.0);
                    tau = a;
                }
            }
        }
    }
}
