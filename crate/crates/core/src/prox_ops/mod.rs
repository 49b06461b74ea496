//! Weighted proximal operators and Euclidean projections.
//!
//! Closed-form projections onto boxes, balls, halfspaces and hyperplanes, a
//! bisection projection onto energy-budget sets, and Dykstra's alternating
//! projection method for intersections of those primitives.

mod dykstra;

pub use dykstra::{dykstra_project, PolyhedralSet, Primitive, DYKSTRA_MAX_ITER, DYKSTRA_TOL};

use nalgebra::DVector;

use crate::block_model::ProxFn;
use crate::error::{check_len, Error, Result};

/// Positive diagonal metric Γ.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalMetric {
    weights: Vec<f64>,
}

impl DiagonalMetric {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Domain(
                "metric weights must be positive and finite".into(),
            ));
        }
        Ok(Self { weights })
    }

    pub fn scalar(dim: usize, w: f64) -> Result<Self> {
        Self::new(vec![w; dim])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// argmin_u r(u) + ½‖u − v‖²_Γ.
pub fn weighted_prox(r: &dyn ProxFn, metric: &DiagonalMetric, v: &[f64]) -> Result<DVector<f64>> {
    check_len("weighted_prox input", r.dim(), v.len())?;
    check_len("weighted_prox metric", r.dim(), metric.weights.len())?;
    let mut out = DVector::zeros(v.len());
    r.prox(&metric.weights, v, out.as_mut_slice())?;
    Ok(out)
}

pub fn project_box(lo: &[f64], hi: &[f64], v: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&x, (&l, &u))| x.clamp(l, u))
        .collect()
}

pub fn project_ball(center: &[f64], radius: f64, v: &[f64]) -> Vec<f64> {
    let dist = v
        .iter()
        .zip(center)
        .map(|(x, c)| (x - c) * (x - c))
        .sum::<f64>()
        .sqrt();
    if dist <= radius {
        return v.to_vec();
    }
    let s = radius / dist;
    v.iter().zip(center).map(|(x, c)| c + s * (x - c)).collect()
}

/// Projection onto {x : ⟨a, x⟩ ≤ c}.
pub fn project_halfspace(a: &[f64], c: f64, v: &[f64]) -> Vec<f64> {
    let excess = crate::linalg::dot(a, v) - c;
    if excess <= 0.0 {
        return v.to_vec();
    }
    shift_along(a, excess, v)
}

/// Projection onto {x : ⟨a, x⟩ = c}.
pub fn project_hyperplane(a: &[f64], c: f64, v: &[f64]) -> Vec<f64> {
    let excess = crate::linalg::dot(a, v) - c;
    shift_along(a, excess, v)
}

fn shift_along(a: &[f64], excess: f64, v: &[f64]) -> Vec<f64> {
    let na = crate::linalg::norm_sq(a);
    if na == 0.0 {
        return v.to_vec();
    }
    let s = excess / na;
    v.iter().zip(a).map(|(x, ai)| x - s * ai).collect()
}

const BUDGET_BISECTION_STEPS: usize = 100;

/// Projection onto {x : Σₜ xₜ ≥ E, l ≤ x ≤ u} by bisection on the budget multiplier.
pub fn project_energy_budget(lo: &[f64], hi: &[f64], e: f64, v: &[f64]) -> Result<Vec<f64>> {
    check_len("energy budget upper bounds", lo.len(), hi.len())?;
    check_len("energy budget input", lo.len(), v.len())?;
    if lo.iter().zip(hi).any(|(l, u)| l > u) {
        return Err(Error::Infeasible("energy budget box is empty".into()));
    }
    let cap: f64 = hi.iter().sum();
    if cap < e {
        return Err(Error::Infeasible(format!(
            "energy budget {e} exceeds total capacity {cap}"
        )));
    }
    let total = |lam: f64| -> f64 {
        v.iter()
            .zip(lo.iter().zip(hi))
            .map(|(&x, (&l, &u))| (x + lam).clamp(l, u))
            .sum()
    };
    if total(0.0) >= e {
        return Ok(project_box(lo, hi, v));
    }
    let vmax = crate::linalg::inf_norm(v);
    let mut upper = e.max(vmax * v.len() as f64).max(f64::MIN_POSITIVE);
    // the bracket above is normally enough; widen it when large upper bounds need more shift
    while total(upper) < e {
        upper *= 2.0;
    }
    let mut lower = 0.0;
    for _ in 0..BUDGET_BISECTION_STEPS {
        let mid = 0.5 * (lower + upper);
        if total(mid) >= e {
            upper = mid;
        } else {
            lower = mid;
        }
    }
    Ok(v.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&x, (&l, &u))| (x + upper).clamp(l, u))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block_model::SeparableProx;

    #[test]
    fn closed_form_projections() {
        assert_eq!(
            project_box(&[0.0, 0.0], &[1.0, 1.0], &[2.0, -1.0]),
            vec![1.0, 0.0]
        );
        let b = project_ball(&[0.0, 0.0], 1.0, &[3.0, 4.0]);
        assert!((b[0] - 0.6).abs() < 1e-15 && (b[1] - 0.8).abs() < 1e-15);
        assert_eq!(
            project_halfspace(&[1.0, 1.0], 0.0, &[1.0, 1.0]),
            vec![0.0, 0.0]
        );
        assert_eq!(
            project_hyperplane(&[1.0, 0.0], 0.0, &[1.0, 1.0]),
            vec![0.0, 1.0]
        );
    }

    #[test]
    fn energy_budget_examples() {
        let feasible = project_energy_budget(&[0.0, 0.0], &[1.0, 1.0], 1.0, &[0.5, 0.7]).unwrap();
        assert_eq!(feasible, vec![0.5, 0.7]);
        let tight = project_energy_budget(&[0.0, 0.0], &[1.0, 1.0], 2.0, &[0.0, 0.0]).unwrap();
        assert!((tight[0] - 1.0).abs() < 1e-14 && (tight[1] - 1.0).abs() < 1e-14);
        let split = project_energy_budget(&[0.0, 0.0], &[10.0, 10.0], 2.0, &[0.0, 0.0]).unwrap();
        assert!((split[0] - 1.0).abs() < 1e-14 && (split[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn energy_budget_infeasible() {
        let err = project_energy_budget(&[0.0, 0.0], &[1.0, 1.0], 3.0, &[0.0, 0.0]);
        assert!(matches!(err, Err(Error::Infeasible(_))));
    }

    #[test]
    fn energy_budget_widens_bracket() {
        let p = project_energy_budget(&[0.0, 0.0], &[0.1, 100.0], 10.0, &[0.0, 0.0]).unwrap();
        assert!((p[0] - 0.1).abs() < 1e-12);
        assert!((p[1] - 9.9).abs() < 1e-12);
    }

    #[test]
    fn weighted_prox_identity_for_zero() {
        let r = SeparableProx::zero(3);
        let m = DiagonalMetric::new(vec![1.0, 2.0, 3.0]).unwrap();
        let out = weighted_prox(&r, &m, &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(out.as_slice(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn metric_must_be_positive() {
        assert!(DiagonalMetric::new(vec![1.0, 0.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dist(a: &[f64], b: &[f64]) -> f64 {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        }

        proptest! {
            #[test]
            fn box_projection_is_idempotent_and_nonexpansive(
                u in prop::collection::vec(-5.0f64..5.0, 4),
                w in prop::collection::vec(-5.0f64..5.0, 4),
            ) {
                let (lo, hi) = (vec![-1.0, 0.0, -2.0, 0.5], vec![1.0, 3.0, -1.0, 0.5]);
                let pu = project_box(&lo, &hi, &u);
                let pw = project_box(&lo, &hi, &w);
                prop_assert_eq!(project_box(&lo, &hi, &pu), pu.clone());
                prop_assert!(dist(&pu, &pw) <= dist(&u, &w) + 1e-12);
            }

            #[test]
            fn ball_and_halfspace_projections_are_nonexpansive(
                u in prop::collection::vec(-5.0f64..5.0, 3),
                w in prop::collection::vec(-5.0f64..5.0, 3),
            ) {
                let c = [0.5, -0.5, 1.0];
                prop_assert!(dist(&project_ball(&c, 1.5, &u), &project_ball(&c, 1.5, &w)) <= dist(&u, &w) + 1e-12);
                let a = [1.0, 2.0, -1.0];
                prop_assert!(
                    dist(&project_halfspace(&a, 0.3, &u), &project_halfspace(&a, 0.3, &w)) <= dist(&u, &w) + 1e-12
                );
            }

            #[test]
            fn energy_budget_projection_is_feasible(
                v in prop::collection::vec(-3.0f64..3.0, 2..6),
                frac in 0.0f64..1.0,
            ) {
                let n = v.len();
                let (lo, hi) = (vec![-1.0; n], vec![2.0; n]);
                let e = -(n as f64) + frac * 3.0 * n as f64;
                let p = project_energy_budget(&lo, &hi, e, &v).unwrap();
                prop_assert!(p.iter().sum::<f64>() >= e - 1e-9);
                prop_assert!(p.iter().all(|x| (-1.0 - 1e-12..=2.0 + 1e-12).contains(x)));
            }
        }
    }
}
