//! Block-structured problem data.
//!
//! A [`ProblemSpec`] describes
//!
//! ```text
//! min Ψ(x) = Σᵢ φᵢ(xᵢ) + rᵢ(xᵢ)   over   argmin ½‖Ax − b‖²
//! ```
//!
//! with x split into blocks x₁..x_d and A = [A₁ … A_d] stored column-block
//! wise. The quadratic penalty h(x) = ½‖Ax − b‖², its gradients and the KKT
//! residual are provided here, together with generators for consensus,
//! model-fitting and random least-squares instances.

mod functions;
mod generators;

pub use functions::{
    FnSmooth, ProxFn, QuadraticSmooth, SeparableProx, SetIndicator, SmoothFn, ZeroSmooth,
    DOMAIN_TOL,
};
pub use generators::{
    make_consensus, make_model_fitting, make_random_inconsistent_ls, LsReference, RandomLsOptions,
};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg;

/// Tolerance and iteration cap for the power iteration computing ‖Aᵢ‖².
pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;

/// Decomposition ℝᵐ = ℝ^{m₁} × … × ℝ^{m_d}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStructure {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockStructure {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Instance("at least one block is required".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Instance("block dimensions must be positive".into()));
        }
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &m in &dims {
            acc += m;
            offsets.push(acc);
        }
        Ok(Self { dims, offsets })
    }

    pub fn uniform(d: usize, m: usize) -> Result<Self> {
        Self::new(vec![m; d])
    }

    pub fn d(&self) -> usize {
        self.dims.len()
    }

    pub fn m(&self) -> usize {
        self.offsets[self.dims.len()]
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self, i: usize) -> usize {
        self.dims[i]
    }

    /// Offsets of the blocks; `offsets()[d] == m`.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Block index owning coordinate `j`.
    pub fn block_of(&self, j: usize) -> usize {
        match self.offsets.binary_search(&j) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }
}

/// Immutable problem description shared by every engine.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    blocks: BlockStructure,
    smooth: Vec<Arc<dyn SmoothFn>>,
    prox: Vec<Arc<dyn ProxFn>>,
    a: Vec<DMatrix<f64>>,
    b: DVector<f64>,
    lambdas: Vec<f64>,
}

impl ProblemSpec {
    pub fn new(
        blocks: BlockStructure,
        smooth: Vec<Arc<dyn SmoothFn>>,
        prox: Vec<Arc<dyn ProxFn>>,
        a: Vec<DMatrix<f64>>,
        b: DVector<f64>,
    ) -> Result<Self> {
        let d = blocks.d();
        check_len("smooth blocks", d, smooth.len())?;
        check_len("prox blocks", d, prox.len())?;
        check_len("constraint blocks", d, a.len())?;
        for i in 0..d {
            check_len("smooth block dimension", blocks.dim(i), smooth[i].dim())?;
            check_len("prox block dimension", blocks.dim(i), prox[i].dim())?;
            check_len("constraint block width", blocks.dim(i), a[i].ncols())?;
            check_len("constraint block height", b.len(), a[i].nrows())?;
        }
        let lambdas = a
            .iter()
            .map(|ai| linalg::spectral_norm_sq(ai, POWER_TOL, POWER_MAX_ITER))
            .collect();
        Ok(Self {
            blocks,
            smooth,
            prox,
            a,
            b,
            lambdas,
        })
    }

    pub fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    pub fn d(&self) -> usize {
        self.blocks.d()
    }

    pub fn m(&self) -> usize {
        self.blocks.m()
    }

    pub fn q(&self) -> usize {
        self.b.len()
    }

    pub fn smooth(&self, i: usize) -> &dyn SmoothFn {
        self.smooth[i].as_ref()
    }

    pub fn prox(&self, i: usize) -> &dyn ProxFn {
        self.prox[i].as_ref()
    }

    pub fn a_block(&self, i: usize) -> &DMatrix<f64> {
        &self.a[i]
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Squared spectral norms λᵢ = ‖Aᵢ‖₂².
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Lᵢ of every smooth block.
    pub fn lipschitz(&self) -> Vec<f64> {
        self.smooth.iter().map(|s| s.lipschitz()).collect()
    }

    /// μᵢ of every prox block.
    pub fn mus(&self) -> Vec<f64> {
        self.prox.iter().map(|r| r.mu()).collect()
    }

    /// Dense q×m constraint matrix.
    pub fn a_full(&self) -> DMatrix<f64> {
        let mut full = DMatrix::zeros(self.q(), self.m());
        for i in 0..self.d() {
            full.columns_mut(self.blocks.offsets()[i], self.blocks.dim(i))
                .copy_from(&self.a[i]);
        }
        full
    }

    /// Block-diagonal Λ.
    pub fn lambda_full(&self) -> DMatrix<f64> {
        let mut full = DMatrix::zeros(self.m(), self.m());
        for i in 0..self.d() {
            let o = self.blocks.offsets()[i];
            let n = self.blocks.dim(i);
            full.view_mut((o, o), (n, n))
                .copy_from(&self.smooth[i].lambda_matrix());
        }
        full
    }

    /// Diagonal of Υ = blkdiag(μᵢ I).
    pub fn upsilon_diag(&self) -> DVector<f64> {
        let mut u = DVector::zeros(self.m());
        for i in 0..self.d() {
            let mu = self.prox[i].mu();
            for j in self.blocks.range(i) {
                u[j] = mu;
            }
        }
        u
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        check_len("primal vector", self.m(), x.len())
    }

    /// ψᵢ(xᵢ) = φᵢ(xᵢ) + rᵢ(xᵢ).
    pub fn block_psi(&self, i: usize, xi: &[f64]) -> f64 {
        let r = self.prox[i].value(xi);
        if r == f64::INFINITY {
            return f64::INFINITY;
        }
        self.smooth[i].value(xi) + r
    }

    /// Ψ(x) = Σᵢ φᵢ(xᵢ) + rᵢ(xᵢ), +∞ outside dom R.
    pub fn eval_psi(&self, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        let mut total = 0.0;
        for i in 0..self.d() {
            total += self.block_psi(i, &x[self.blocks.range(i)]);
        }
        Ok(total)
    }

    /// A x.
    pub fn apply_a(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_x(x)?;
        let mut out = DVector::zeros(self.q());
        for i in 0..self.d() {
            linalg::gemv_add(
                out.as_mut_slice(),
                1.0,
                &self.a[i],
                &x[self.blocks.range(i)],
            );
        }
        Ok(out)
    }

    /// A x − b.
    pub fn residual(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.apply_a(x)? - &self.b)
    }

    /// Aᵀ r.
    pub fn apply_at(&self, r: &[f64]) -> Result<DVector<f64>> {
        check_len("dual vector", self.q(), r.len())?;
        let mut out = DVector::zeros(self.m());
        for i in 0..self.d() {
            let range = self.blocks.range(i);
            linalg::gemv_tr(&mut out.as_mut_slice()[range], &self.a[i], r);
        }
        Ok(out)
    }

    /// h(x) = ½‖Ax − b‖².
    pub fn penalty_h(&self, x: &[f64]) -> Result<f64> {
        Ok(0.5 * self.residual(x)?.norm_squared())
    }

    /// ∇h(x) = Aᵀ(Ax − b).
    pub fn grad_h(&self, x: &[f64]) -> Result<DVector<f64>> {
        let r = self.residual(x)?;
        self.apply_at(r.as_slice())
    }

    /// ∇ᵢh(z) = Aᵢᵀ(Az − b), without forming AᵀA.
    pub fn partial_grad_h(&self, z: &[f64], i: usize) -> Result<DVector<f64>> {
        let r = self.residual(z)?;
        let mut out = DVector::zeros(self.blocks.dim(i));
        linalg::gemv_tr(out.as_mut_slice(), &self.a[i], r.as_slice());
        Ok(out)
    }

    /// ∇Φ(x).
    pub fn grad_phi(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_x(x)?;
        let mut out = DVector::zeros(self.m());
        for i in 0..self.d() {
            let range = self.blocks.range(i);
            self.smooth[i].grad(&x[range.clone()], &mut out.as_mut_slice()[range]);
        }
        Ok(out)
    }

    /// prox_R with a unit metric.
    pub fn prox_r(&self, v: &[f64]) -> Result<DVector<f64>> {
        self.check_x(v)?;
        let mut out = DVector::zeros(self.m());
        for i in 0..self.d() {
            let range = self.blocks.range(i);
            let unit = vec![1.0; range.len()];
            self.prox[i].prox(&unit, &v[range.clone()], &mut out.as_mut_slice()[range])?;
        }
        Ok(out)
    }

    /// KKT residual of L(x, y) = Ψ(x) + ⟨y, Ax − b⟩:
    /// max(‖x − prox_R(x − ∇Φ(x) − Aᵀy)‖∞, ‖Ax − b‖∞).
    pub fn kkt_residual(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        check_len("dual vector", self.q(), y.len())?;
        let g = self.grad_phi(x)? + self.apply_at(y)?;
        let v = DVector::from_column_slice(x) - g;
        let p = self.prox_r(v.as_slice())?;
        let primal = x
            .iter()
            .zip(p.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dual = linalg::inf_norm(self.residual(x)?.as_slice());
        Ok(primal.max(dual))
    }

    /// A point of dom R obtained by applying prox_R to the origin.
    pub fn feasible_start(&self) -> Result<DVector<f64>> {
        self.prox_r(&vec![0.0; self.m()])
    }
}
