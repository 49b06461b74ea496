//! Per-block smooth and proximable function oracles.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::prox_ops::{dykstra_project, PolyhedralSet, DYKSTRA_MAX_ITER, DYKSTRA_TOL};

/// Slack used when testing membership in a closed domain.
pub const DOMAIN_TOL: f64 = 1e-9;

/// Smooth part φᵢ of a block, with the curvature bound Λᵢ.
pub trait SmoothFn: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64], out: &mut [f64]);
    /// Scalar Lᵢ with Λᵢ = Lᵢ·I.
    fn lipschitz(&self) -> f64;

    fn lambda_matrix(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) * self.lipschitz()
    }
}

/// Nonsmooth part rᵢ of a block, accessed through its weighted prox.
pub trait ProxFn: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    /// Value of rᵢ, `f64::INFINITY` outside the domain.
    fn value(&self, x: &[f64]) -> f64;
    /// argmin_u r(u) + ½‖u − v‖²_Γ with Γ = diag(`metric`).
    fn prox(&self, metric: &[f64], v: &[f64], out: &mut [f64]) -> Result<()>;
    /// Strong-convexity modulus μᵢ.
    fn mu(&self) -> f64 {
        0.0
    }
}

/// φ ≡ 0.
#[derive(Debug, Clone)]
pub struct ZeroSmooth {
    pub dim: usize,
}

impl SmoothFn for ZeroSmooth {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn grad(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn lipschitz(&self) -> f64 {
        0.0
    }
}

/// φ(x) = ½ xᵀHx + gᵀx + c with H symmetric PSD.
#[derive(Debug, Clone)]
pub struct QuadraticSmooth {
    h: DMatrix<f64>,
    g: DVector<f64>,
    c: f64,
    l: f64,
}

impl QuadraticSmooth {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, c: f64) -> Result<Self> {
        if h.nrows() != h.ncols() {
            return Err(Error::Instance("quadratic Hessian must be square".into()));
        }
        check_len("quadratic linear term", h.nrows(), g.len())?;
        let h = linalg::symmetrize(&h);
        let l = linalg::max_eig(&h).max(0.0);
        Ok(Self { h, g, c, l })
    }

    /// φ(x) = (w/2)‖x − center‖².
    pub fn scaled_distance(w: f64, center: &[f64]) -> Self {
        let n = center.len();
        let c = DVector::from_column_slice(center);
        let h = DMatrix::identity(n, n) * w;
        let g = -&c * w;
        let c0 = 0.5 * w * c.norm_squared();
        Self {
            h,
            g,
            c: c0,
            l: w.max(0.0),
        }
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.g
    }
}

impl SmoothFn for QuadraticSmooth {
    fn dim(&self) -> usize {
        self.g.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        0.5 * xv.dot(&(&self.h * &xv)) + self.g.dot(&xv) + self.c
    }
    fn grad(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.g[i] + linalg::dot(self.h.row(i).transpose().as_slice(), x);
        }
    }
    fn lipschitz(&self) -> f64 {
        self.l
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Smooth block defined by user closures.
#[derive(Clone)]
pub struct FnSmooth {
    dim: usize,
    value: Arc<ValueFn>,
    grad: Arc<GradFn>,
    l: f64,
}

impl FnSmooth {
    pub fn new(
        dim: usize,
        l: f64,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            value: Arc::new(value),
            grad: Arc::new(grad),
            l,
        }
    }
}

impl fmt::Debug for FnSmooth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnSmooth")
            .field("dim", &self.dim)
            .field("l", &self.l)
            .finish_non_exhaustive()
    }
}

impl SmoothFn for FnSmooth {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn grad(&self, x: &[f64], out: &mut [f64]) {
        (self.grad)(x, out)
    }
    fn lipschitz(&self) -> f64 {
        self.l
    }
}

/// Coordinate-separable r(x) = Σⱼ [ (μ/2)(xⱼ − cⱼ)² + λ|xⱼ| + ι_[lⱼ,uⱼ](xⱼ) ].
///
/// Covers r ≡ 0, ℓ₁, box indicators, ridge terms and their sums.
#[derive(Debug, Clone)]
pub struct SeparableProx {
    mu: f64,
    center: Vec<f64>,
    l1: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl SeparableProx {
    pub fn zero(dim: usize) -> Self {
        Self {
            mu: 0.0,
            center: vec![0.0; dim],
            l1: 0.0,
            lo: vec![f64::NEG_INFINITY; dim],
            hi: vec![f64::INFINITY; dim],
        }
    }

    pub fn l1(dim: usize, weight: f64) -> Self {
        Self {
            l1: weight,
            ..Self::zero(dim)
        }
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_len("box bounds", lo.len(), hi.len())?;
        if lo.iter().zip(&hi).any(|(l, u)| l > u) {
            return Err(Error::Infeasible(
                "box with lower bound above upper bound".into(),
            ));
        }
        let dim = lo.len();
        Ok(Self {
            lo,
            hi,
            ..Self::zero(dim)
        })
    }

    pub fn ridge(dim: usize, mu: f64) -> Self {
        Self {
            mu,
            ..Self::zero(dim)
        }
    }

    pub fn with_ridge(mut self, mu: f64, center: Vec<f64>) -> Result<Self> {
        check_len("ridge center", self.center.len(), center.len())?;
        self.mu = mu;
        self.center = center;
        Ok(self)
    }

    pub fn with_l1(mut self, weight: f64) -> Self {
        self.l1 = weight;
        self
    }

    pub fn with_box(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = Self::boxed(lo, hi)?;
        check_len("box bounds", self.center.len(), b.lo.len())?;
        self.lo = b.lo;
        self.hi = b.hi;
        Ok(self)
    }

    pub fn lower(&self) -> &[f64] {
        &self.lo
    }

    pub fn upper(&self) -> &[f64] {
        &self.hi
    }
}

impl ProxFn for SeparableProx {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            let slack = DOMAIN_TOL * (1.0 + xj.abs());
            if xj < self.lo[j] - slack || xj > self.hi[j] + slack {
                return f64::INFINITY;
            }
            let d = xj - self.center[j];
            v += 0.5 * self.mu * d * d + self.l1 * xj.abs();
        }
        v
    }

    fn prox(&self, metric: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("prox metric", self.dim(), metric.len())?;
        check_len("prox input", self.dim(), v.len())?;
        for j in 0..v.len() {
            let g = metric[j];
            let s = self.mu + g;
            let a = (self.mu * self.center[j] + g * v[j]) / s;
            let t = self.l1 / s;
            let u = if a > t {
                a - t
            } else if a < -t {
                a + t
            } else {
                0.0
            };
            out[j] = u.clamp(self.lo[j], self.hi[j]);
        }
        Ok(())
    }

    fn mu(&self) -> f64 {
        self.mu
    }
}

/// Indicator of a polyhedral intersection, projected by Dykstra's method.
///
/// Only Euclidean (scalar) metrics are supported since the projection is not
/// separable across coordinates.
#[derive(Debug, Clone)]
pub struct SetIndicator {
    pub set: PolyhedralSet,
    pub tol: f64,
    pub max_iter: usize,
}

impl SetIndicator {
    pub fn new(set: PolyhedralSet) -> Self {
        Self {
            set,
            tol: DYKSTRA_TOL,
            max_iter: DYKSTRA_MAX_ITER,
        }
    }
}

pub(crate) fn require_scalar_metric(metric: &[f64]) -> Result<()> {
    if let Some(&g0) = metric.first() {
        if metric.iter().any(|&g| (g - g0).abs() > 1e-14 * g0.abs()) {
            return Err(Error::Unsupported(
                "non-separable prox requires a scalar metric".into(),
            ));
        }
    }
    Ok(())
}

impl ProxFn for SetIndicator {
    fn dim(&self) -> usize {
        self.set.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        if self.set.max_violation(x) <= DOMAIN_TOL.max(10.0 * self.tol) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    fn prox(&self, metric: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        require_scalar_metric(metric)?;
        let p = dykstra_project(&self.set, v, self.tol, self.max_iter)?;
        out.copy_from_slice(&p);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_with_metric_two() {
        let r = SeparableProx::l1(1, 1.0);
        let mut out = [0.0];
        r.prox(&[2.0], &[3.0], &mut out).unwrap();
        assert!((out[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn box_prox_clamps() {
        let r = SeparableProx::boxed(vec![0.0], vec![1.0]).unwrap();
        let mut out = [0.0];
        r.prox(&[7.0], &[1.7], &mut out).unwrap();
        assert_eq!(out[0], 1.0);
    }

    #[test]
    fn ridge_prox_shrinks_toward_center() {
        // argmin (1/2)(u-1)^2 + (1/2)(u-3)^2 = 2
        let r = SeparableProx::zero(1).with_ridge(1.0, vec![1.0]).unwrap();
        let mut out = [0.0];
        r.prox(&[1.0], &[3.0], &mut out).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_gradient_and_value() {
        let q = QuadraticSmooth::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]),
            DVector::from_vec(vec![1.0, -1.0]),
            0.5,
        )
        .unwrap();
        assert!((q.value(&[1.0, 1.0]) - (0.5 * 6.0 + 0.0 + 0.5)).abs() < 1e-15);
        let mut g = [0.0; 2];
        q.grad(&[1.0, 1.0], &mut g);
        assert_eq!(g, [3.0, 3.0]);
        assert!((q.lipschitz() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn set_indicator_rejects_anisotropic_metric() {
        let set = PolyhedralSet::new(2).with_ball(vec![0.0, 0.0], 1.0);
        let r = SetIndicator::new(set);
        let mut out = [0.0; 2];
        assert!(matches!(
            r.prox(&[1.0, 2.0], &[3.0, 4.0], &mut out),
            Err(Error::Unsupported(_))
        ));
        r.prox(&[2.0, 2.0], &[3.0, 4.0], &mut out).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-10 && (out[1] - 0.8).abs() < 1e-10);
    }
}
