//! Instance generators: consensus, distributed model fitting, random inconsistent least squares.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    BlockStructure, ProblemSpec, ProxFn, QuadraticSmooth, SeparableProx, SmoothFn, ZeroSmooth,
};
use crate::error::{check_len, Error, Result};

/// Consensus over a connected graph with edge-node incidence constraints.
///
/// Node i owns block xᵢ with local function `local[i]`; every edge (u, v)
/// contributes the rows x_u − x_v = 0.
pub fn make_consensus(
    edges: &[(usize, usize)],
    local: Vec<Arc<dyn ProxFn>>,
) -> Result<ProblemSpec> {
    let n = local.len();
    if n == 0 {
        return Err(Error::Instance("consensus needs at least one node".into()));
    }
    let k = local[0].dim();
    if local.iter().any(|r| r.dim() != k) {
        return Err(Error::Instance(
            "consensus blocks must share one dimension".into(),
        ));
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for &(u, v) in edges {
        if u >= n || v >= n || u == v {
            return Err(Error::Instance(format!("invalid edge ({u}, {v})")));
        }
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        parent[ru] = rv;
    }
    let root = find(&mut parent, 0);
    if (0..n).any(|i| find(&mut parent, i) != root) {
        return Err(Error::Instance("consensus graph is disconnected".into()));
    }
    let q = edges.len().max(1) * k;
    let mut a = vec![DMatrix::zeros(q, k); n];
    for (e, &(u, v)) in edges.iter().enumerate() {
        for j in 0..k {
            a[u][(e * k + j, j)] = 1.0;
            a[v][(e * k + j, j)] = -1.0;
        }
    }
    let smooth: Vec<Arc<dyn SmoothFn>> = (0..n)
        .map(|_| Arc::new(ZeroSmooth { dim: k }) as Arc<dyn SmoothFn>)
        .collect();
    ProblemSpec::new(
        BlockStructure::uniform(n, k)?,
        smooth,
        local,
        a,
        DVector::zeros(q),
    )
}

/// Lifted model-fitting problem: x = (u, v), A x = K u − v, φ on v, r on u.
///
/// Every coordinate is its own block; the first p blocks are u and the next
/// q blocks are v.
pub fn make_model_fitting(
    k: &DMatrix<f64>,
    b: &DVector<f64>,
    losses: Vec<Arc<dyn SmoothFn>>,
    regs: Vec<Arc<dyn ProxFn>>,
) -> Result<ProblemSpec> {
    let (q, p) = k.shape();
    check_len("model fitting response", q, b.len())?;
    check_len("model fitting losses", q, losses.len())?;
    check_len("model fitting regularizers", p, regs.len())?;
    if losses.iter().any(|l| l.dim() != 1) || regs.iter().any(|r| r.dim() != 1) {
        return Err(Error::Instance(
            "losses and regularizers must be scalar".into(),
        ));
    }
    let mut smooth: Vec<Arc<dyn SmoothFn>> = Vec::with_capacity(p + q);
    let mut prox: Vec<Arc<dyn ProxFn>> = Vec::with_capacity(p + q);
    let mut a = Vec::with_capacity(p + q);
    for (j, reg) in regs.into_iter().enumerate() {
        smooth.push(Arc::new(ZeroSmooth { dim: 1 }));
        prox.push(reg);
        a.push(k.columns(j, 1).into_owned());
    }
    for (i, loss) in losses.into_iter().enumerate() {
        smooth.push(loss);
        prox.push(Arc::new(SeparableProx::zero(1)));
        let mut col = DMatrix::zeros(q, 1);
        col[(i, 0)] = -1.0;
        a.push(col);
    }
    ProblemSpec::new(
        BlockStructure::uniform(p + q, 1)?,
        smooth,
        prox,
        a,
        b.clone(),
    )
}

/// Parameters of the random inconsistent least-squares generator.
#[derive(Debug, Clone)]
pub struct RandomLsOptions {
    pub seed: u64,
    pub dims: Vec<usize>,
    pub q: usize,
    /// Norm scale of the component of b outside range(A).
    pub noise: f64,
    /// Curvature bound Lᵢ of the quadratic φᵢ (0 gives φᵢ ≡ 0).
    pub lipschitz: f64,
    /// Ridge modulus μᵢ inside rᵢ.
    pub mu: f64,
    pub l1: f64,
    pub bounds: Option<(f64, f64)>,
}

impl Default for RandomLsOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            dims: vec![4; 10],
            q: 60,
            noise: 0.1,
            lipschitz: 1.0,
            mu: 0.0,
            l1: 0.0,
            bounds: None,
        }
    }
}

/// Ground truth recorded by the random generator.
#[derive(Debug, Clone)]
pub struct LsReference {
    /// A point of argmin h (the unique one when A has full column rank).
    pub x_star: DVector<f64>,
    pub h_star: f64,
    /// Ψ(x_star); the optimal value when argmin h is a singleton.
    pub psi_star: f64,
}

/// Random instance with Gaussian A and b = A x̄ + ξ, ξ ⟂ range(A).
///
/// The construction keeps x̄ ∈ argmin h, so h* = ½‖ξ‖² exactly.
pub fn make_random_inconsistent_ls(opts: &RandomLsOptions) -> Result<(ProblemSpec, LsReference)> {
    let blocks = BlockStructure::new(opts.dims.clone())?;
    let (m, q) = (blocks.m(), opts.q);
    if q == 0 {
        return Err(Error::Instance("q must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let scale = 1.0 / (q as f64).sqrt();
    let a_full = DMatrix::from_fn(q, m, |_, _| gauss(&mut rng) * scale);
    let x_bar = DVector::from_fn(m, |_, _| match opts.bounds {
        Some((lo, hi)) => lo + (hi - lo) * (0.1 + 0.8 * rng.random::<f64>()),
        None => gauss(&mut rng),
    });

    // component of a random direction orthogonal to range(A)
    let g = DVector::from_fn(q, |_, _| gauss(&mut rng));
    let svd = a_full.clone().svd(true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let mut xi = g.clone();
    for (c, &s) in svd.singular_values.iter().enumerate() {
        if s > 1e-12 * smax.max(1.0) {
            let col = u.column(c);
            let coef = col.dot(&g);
            xi -= col * coef;
        }
    }
    let xn = xi.norm();
    if xn > 0.0 {
        xi *= opts.noise * (q as f64).sqrt() * scale / xn;
    }
    let b = &a_full * &x_bar + &xi;

    let mut smooth: Vec<Arc<dyn SmoothFn>> = Vec::with_capacity(blocks.d());
    let mut prox: Vec<Arc<dyn ProxFn>> = Vec::with_capacity(blocks.d());
    let mut a = Vec::with_capacity(blocks.d());
    for i in 0..blocks.d() {
        let mi = blocks.dim(i);
        if opts.lipschitz > 0.0 {
            let gm = DMatrix::from_fn(mi, mi, |_, _| gauss(&mut rng));
            let mut h = &gm * gm.transpose();
            let top = crate::linalg::max_eig(&h);
            h *= opts.lipschitz / top;
            let lin = DVector::from_fn(mi, |_, _| gauss(&mut rng));
            smooth.push(Arc::new(QuadraticSmooth::new(h, lin, 0.0)?));
        } else {
            smooth.push(Arc::new(ZeroSmooth { dim: mi }));
        }
        let mut r = SeparableProx::zero(mi).with_l1(opts.l1);
        if opts.mu > 0.0 {
            r = r.with_ridge(opts.mu, vec![0.0; mi])?;
        }
        if let Some((lo, hi)) = opts.bounds {
            r = r.with_box(vec![lo; mi], vec![hi; mi])?;
        }
        prox.push(Arc::new(r));
        a.push(a_full.columns(blocks.offsets()[i], mi).into_owned());
    }
    let problem = ProblemSpec::new(blocks, smooth, prox, a, b)?;
    let psi_star = problem.eval_psi(x_bar.as_slice())?;
    let reference = LsReference {
        h_star: 0.5 * xi.norm_squared(),
        x_star: x_bar,
        psi_star,
    };
    Ok((problem, reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consensus_rejects_disconnected_graph() {
        let local: Vec<Arc<dyn ProxFn>> = (0..3)
            .map(|_| Arc::new(SeparableProx::zero(1)) as Arc<dyn ProxFn>)
            .collect();
        assert!(make_consensus(&[(0, 1)], local.clone()).is_err());
        assert!(make_consensus(&[(0, 1), (1, 2)], local).is_ok());
    }

    #[test]
    fn triangle_incidence_kernel_is_constants() {
        let local: Vec<Arc<dyn ProxFn>> = (0..3)
            .map(|_| Arc::new(SeparableProx::zero(1)) as Arc<dyn ProxFn>)
            .collect();
        let p = make_consensus(&[(0, 1), (1, 2), (2, 0)], local).unwrap();
        assert_eq!(p.residual(&[2.0, 2.0, 2.0]).unwrap().norm(), 0.0);
        assert!(p.residual(&[2.0, 2.0, 2.5]).unwrap().norm() > 0.0);
    }

    #[test]
    fn noiseless_instance_is_consistent() {
        let opts = RandomLsOptions {
            noise: 0.0,
            ..Default::default()
        };
        let (p, r) = make_random_inconsistent_ls(&opts).unwrap();
        assert_eq!(r.h_star, 0.0);
        assert!(p.penalty_h(r.x_star.as_slice()).unwrap() < 1e-25);
    }

    #[test]
    fn recorded_minimizer_satisfies_normal_equations() {
        let (p, r) = make_random_inconsistent_ls(&RandomLsOptions::default()).unwrap();
        let g = p.grad_h(r.x_star.as_slice()).unwrap();
        assert!(g.amax() < 1e-10);
        assert!(r.h_star > 0.0);
        assert!((p.penalty_h(r.x_star.as_slice()).unwrap() - r.h_star).abs() < 1e-12);
    }

    #[test]
    fn model_fitting_layout() {
        let k = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let losses: Vec<Arc<dyn SmoothFn>> = (0..2)
            .map(|_| Arc::new(QuadraticSmooth::scaled_distance(1.0, &[0.0])) as Arc<dyn SmoothFn>)
            .collect();
        let regs: Vec<Arc<dyn ProxFn>> = (0..2)
            .map(|_| Arc::new(SeparableProx::zero(1)) as Arc<dyn ProxFn>)
            .collect();
        let p = make_model_fitting(&k, &b, losses, regs).unwrap();
        assert_eq!(p.d(), 4);
        // u = b, v = 0 is feasible with zero loss
        assert!(p.residual(&[1.0, 1.0, 0.0, 0.0]).unwrap().norm() < 1e-15);
        assert_eq!(p.eval_psi(&[1.0, 1.0, 0.0, 0.0]).unwrap(), 0.0);
    }
}
