//! Runtime certificates: averaging coefficients, the conditional descent of
//! the Lyapunov function, the prox inequality and the step-size matrix
//! inequalities.

use nalgebra::{DMatrix, DVector};

use super::{Rbcd, Reference};
use crate::error::{check_len, Error, Result};
use crate::sampling::Sampling;
use crate::stepsize::{a_blocks, certify_mi, MiReport, StepPolicy};

/// γ^{k,t} for one block: wᵢᵏ = Σₜ γ^{k,t} x̂ᵢᵗ with x̂ᵢ⁰ = xᵢ⁰.
#[derive(Debug, Clone)]
pub struct GammaTable {
    /// `rows[k][t]` for t ≤ k.
    pub rows: Vec<Vec<f64>>,
}

impl GammaTable {
    /// Largest |Σₜ γ^{k,t} − 1| over all rows.
    pub fn closure_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest coefficient in the table.
    pub fn min_coefficient(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Builds rows 0..=K of the γ table from θ₀..θ_{K−1} and the block probability π.
pub fn gamma_coefficients(thetas: &[f64], pi: f64) -> Result<GammaTable> {
    if !(pi > 0.0 && pi <= 1.0) {
        return Err(Error::Domain(format!("probability {pi} outside (0, 1]")));
    }
    let mut rows = vec![vec![1.0]];
    for (k, &theta) in thetas.iter().enumerate() {
        let prev = &rows[k];
        let mut next: Vec<f64> = prev.iter().map(|g| (1.0 - theta) * g).collect();
        next[k] += theta * (1.0 - 1.0 / pi);
        next.push(theta / pi);
        rows.push(next);
    }
    Ok(GammaTable { rows })
}

/// V_k − σₖ²(h(xᵏ) − h*) − E_k[V_{k+1}], exact over the enumerated support.
///
/// Nonnegative (up to rounding) whenever the step-size inequalities hold.
pub fn martingale_slack(engine: &Rbcd<'_>, reference: &Reference) -> Result<f64> {
    let (v, _) = engine.lyapunov(reference)?;
    let (gx, _) = engine.h_gaps(reference)?;
    let sigma = engine.state.step.sigma;
    let expected = engine.sampling().expectation(|act| {
        let mut next = engine.clone();
        next.step_with(act)?;
        Ok(next.lyapunov(reference)?.0)
    })?;
    Ok(v - sigma * sigma * gx - expected)
}

/// R(x) + ζ(x) − ½‖x − x̂‖²_{Q+Υ} − R(x̂) − ζ(x̂) with x̂ the full forward-backward point.
pub fn prox_inequality_slack(engine: &Rbcd<'_>, x: &[f64]) -> Result<f64> {
    check_len("probe point", engine.problem().m(), x.len())?;
    let xhat = engine.full_forward_backward()?;
    let qu = engine.q_plus_upsilon();
    let dist: f64 = (0..x.len()).map(|j| qu[j] * (x[j] - xhat[j]).powi(2)).sum();
    let lhs = engine.r_value(xhat.as_slice()) + engine.zeta(xhat.as_slice())?;
    let rhs = engine.r_value(x) + engine.zeta(x)? - 0.5 * dist;
    Ok(rhs - lhs)
}

/// Precomputed matrices for checking both step-size inequalities along a run.
#[derive(Debug, Clone)]
pub struct MiChecker {
    lambda: DMatrix<f64>,
    upsilon: DVector<f64>,
    xi: DMatrix<f64>,
    p: DVector<f64>,
    b: DVector<f64>,
}

impl MiChecker {
    pub fn new(
        problem: &crate::block_model::ProblemSpec,
        sampling: &Sampling,
        policy: &StepPolicy,
    ) -> Result<Self> {
        let blocks = problem.blocks();
        let xi = sampling.xi_matrix(blocks, &a_blocks(problem))?;
        let mut b = DVector::zeros(problem.m());
        for i in 0..problem.d() {
            for j in blocks.range(i) {
                b[j] = policy.metric_b()[i];
            }
        }
        Ok(Self {
            lambda: problem.lambda_full(),
            upsilon: problem.upsilon_diag(),
            xi,
            p: sampling.weight_diag(blocks)?,
            b,
        })
    }

    pub fn check(&self, policy: &StepPolicy, cur: crate::stepsize::StepState) -> Result<MiReport> {
        let next = policy.advance(cur)?;
        Ok(certify_mi(
            &self.lambda,
            &self.upsilon,
            &self.xi,
            &self.p,
            &self.b,
            cur,
            next,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sum_to_one() {
        let thetas: Vec<f64> = (0..30).map(|k| 0.25 / (1.0 + 0.1 * k as f64)).collect();
        let t = gamma_coefficients(&thetas, 0.5).unwrap();
        assert!(t.closure_error() < 1e-12);
        assert_eq!(t.rows.len(), 31);
    }

    #[test]
    fn nonnegative_when_theta_below_pi() {
        let thetas = vec![0.3; 20];
        let t = gamma_coefficients(&thetas, 0.3).unwrap();
        assert!(t.min_coefficient() >= -1e-15);
    }

    #[test]
    fn rejects_bad_probability() {
        assert!(gamma_coefficients(&[0.1], 0.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gamma_rows_are_convex_weights(
                pi in 0.1f64..1.0,
                decay in 0.0f64..1.0,
                frac in 0.05f64..1.0,
            ) {
                let theta0 = frac * pi;
                let thetas: Vec<f64> = (0..40).map(|k| theta0 / (1.0 + decay * k as f64)).collect();
                let t = gamma_coefficients(&thetas, pi).unwrap();
                prop_assert!(t.closure_error() <= 1e-12);
                prop_assert!(t.min_coefficient() >= -1e-12);
            }
        }
    }
}
