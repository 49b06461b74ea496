use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{
    project_ball, project_box, project_energy_budget, project_halfspace, project_hyperplane,
};
use crate::error::{check_len, Error, Result};
use crate::linalg;

pub const DYKSTRA_TOL: f64 = 1e-10;
pub const DYKSTRA_MAX_ITER: usize = 10_000;

/// A convex constraint acting on the coordinates listed in `idx`.
#[derive(Debug, Clone)]
pub enum Primitive {
    Box {
        idx: Vec<usize>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// ⟨a, x⟩ ≤ c
    Halfspace {
        idx: Vec<usize>,
        a: Vec<f64>,
        c: f64,
    },
    /// ⟨a, x⟩ = c
    Hyperplane {
        idx: Vec<usize>,
        a: Vec<f64>,
        c: f64,
    },
    Ball {
        idx: Vec<usize>,
        center: Vec<f64>,
        radius: f64,
    },
    /// Σ xₜ ≥ e with l ≤ x ≤ u
    EnergyBudget {
        idx: Vec<usize>,
        lo: Vec<f64>,
        hi: Vec<f64>,
        e: f64,
    },
    /// C x = d, with (C Cᵀ)⁻¹ factored once
    Affine(AffineSubspace),
}

#[derive(Debug, Clone)]
pub struct AffineSubspace {
    idx: Vec<usize>,
    c: DMatrix<f64>,
    d: DVector<f64>,
    gram: Cholesky<f64, Dyn>,
}

impl Primitive {
    pub fn affine(idx: Vec<usize>, c: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        check_len("affine constraint columns", idx.len(), c.ncols())?;
        check_len("affine right-hand side", c.nrows(), d.len())?;
        let gram = Cholesky::new(&c * c.transpose())
            .ok_or_else(|| Error::Instance("affine constraints must have full row rank".into()))?;
        Ok(Primitive::Affine(AffineSubspace { idx, c, d, gram }))
    }

    pub fn idx(&self) -> &[usize] {
        match self {
            Primitive::Box { idx, .. }
            | Primitive::Halfspace { idx, .. }
            | Primitive::Hyperplane { idx, .. }
            | Primitive::Ball { idx, .. }
            | Primitive::EnergyBudget { idx, .. } => idx,
            Primitive::Affine(a) => &a.idx,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.idx().len();
        match self {
            Primitive::Box { lo, hi, .. } => {
                check_len("box lower bounds", n, lo.len())?;
                check_len("box upper bounds", n, hi.len())?;
                if lo.iter().zip(hi).any(|(l, u)| l > u) {
                    return Err(Error::Infeasible("empty box primitive".into()));
                }
            }
            Primitive::Halfspace { a, .. } => check_len("halfspace normal", n, a.len())?,
            Primitive::Hyperplane { a, c, .. } => {
                check_len("hyperplane normal", n, a.len())?;
                if linalg::norm_sq(a) == 0.0 && *c != 0.0 {
                    return Err(Error::Infeasible("degenerate hyperplane".into()));
                }
            }
            Primitive::Ball { center, radius, .. } => {
                check_len("ball center", n, center.len())?;
                if *radius < 0.0 {
                    return Err(Error::Infeasible("negative ball radius".into()));
                }
            }
            Primitive::EnergyBudget { lo, hi, e, .. } => {
                check_len("budget lower bounds", n, lo.len())?;
                check_len("budget upper bounds", n, hi.len())?;
                if hi.iter().sum::<f64>() < *e {
                    return Err(Error::Infeasible("energy budget exceeds capacity".into()));
                }
            }
            Primitive::Affine(_) => {}
        }
        Ok(())
    }

    /// Euclidean projection of the local sub-vector.
    pub fn project_local(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(match self {
            Primitive::Box { lo, hi, .. } => project_box(lo, hi, v),
            Primitive::Halfspace { a, c, .. } => project_halfspace(a, *c, v),
            Primitive::Hyperplane { a, c, .. } => project_hyperplane(a, *c, v),
            Primitive::Ball { center, radius, .. } => project_ball(center, *radius, v),
            Primitive::EnergyBudget { lo, hi, e, .. } => project_energy_budget(lo, hi, *e, v)?,
            Primitive::Affine(a) => {
                let x = DVector::from_column_slice(v);
                let r = &a.c * &x - &a.d;
                let lam = a.gram.solve(&r);
                (x - a.c.tr_mul(&lam)).as_slice().to_vec()
            }
        })
    }

    /// Distance-like violation of the local sub-vector (0 when feasible).
    pub fn violation_local(&self, v: &[f64]) -> f64 {
        match self {
            Primitive::Box { lo, hi, .. } => v
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&x, (&l, &u))| (l - x).max(x - u).max(0.0))
                .fold(0.0, f64::max),
            Primitive::Halfspace { a, c, .. } => {
                let na = linalg::norm_sq(a).sqrt();
                if na == 0.0 {
                    (-c).max(0.0)
                } else {
                    ((linalg::dot(a, v) - c) / na).max(0.0)
                }
            }
            Primitive::Hyperplane { a, c, .. } => {
                let na = linalg::norm_sq(a).sqrt();
                if na == 0.0 {
                    c.abs()
                } else {
                    (linalg::dot(a, v) - c).abs() / na
                }
            }
            Primitive::Ball { center, radius, .. } => {
                let d = v
                    .iter()
                    .zip(center)
                    .map(|(x, c)| (x - c) * (x - c))
                    .sum::<f64>()
                    .sqrt();
                (d - radius).max(0.0)
            }
            Primitive::EnergyBudget { lo, hi, e, .. } => {
                let bx = v
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(&x, (&l, &u))| (l - x).max(x - u).max(0.0))
                    .fold(0.0, f64::max);
                let short = (e - v.iter().sum::<f64>()).max(0.0) / (v.len() as f64).sqrt();
                bx.max(short)
            }
            Primitive::Affine(a) => {
                let x = DVector::from_column_slice(v);
                let r = &a.c * &x - &a.d;
                let lam = a.gram.solve(&r);
                a.c.tr_mul(&lam).norm()
            }
        }
    }
}

/// Intersection of convex primitives in ℝⁿ.
///
/// Primitives are grouped in stages. The primitives of one stage touch
/// disjoint coordinates and are projected together as a single Dykstra step.
#[derive(Debug, Clone)]
pub struct PolyhedralSet {
    dim: usize,
    stages: Vec<Vec<Primitive>>,
}

impl PolyhedralSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            stages: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stages(&self) -> &[Vec<Primitive>] {
        &self.stages
    }

    /// Adds a stage of primitives acting on disjoint coordinates.
    pub fn push_stage(&mut self, stage: Vec<Primitive>) -> Result<()> {
        let mut seen = vec![false; self.dim];
        for p in &stage {
            p.validate()?;
            for &j in p.idx() {
                if j >= self.dim {
                    return Err(Error::Dimension {
                        what: "primitive coordinate",
                        expected: self.dim,
                        got: j,
                    });
                }
                if seen[j] {
                    return Err(Error::Instance(
                        "primitives within one stage must touch disjoint coordinates".into(),
                    ));
                }
                seen[j] = true;
            }
        }
        self.stages.push(stage);
        Ok(())
    }

    fn all(&self) -> Vec<usize> {
        (0..self.dim).collect()
    }

    pub fn with_stage(mut self, stage: Vec<Primitive>) -> Result<Self> {
        self.push_stage(stage)?;
        Ok(self)
    }

    pub fn with_box(self, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        let idx = self.all();
        self.with_stage(vec![Primitive::Box { idx, lo, hi }])
            .expect("box primitive over all coordinates")
    }

    pub fn with_halfspace(self, a: Vec<f64>, c: f64) -> Self {
        let idx = self.all();
        self.with_stage(vec![Primitive::Halfspace { idx, a, c }])
            .expect("halfspace primitive over all coordinates")
    }

    pub fn with_hyperplane(self, a: Vec<f64>, c: f64) -> Self {
        let idx = self.all();
        self.with_stage(vec![Primitive::Hyperplane { idx, a, c }])
            .expect("hyperplane primitive over all coordinates")
    }

    pub fn with_ball(self, center: Vec<f64>, radius: f64) -> Self {
        let idx = self.all();
        self.with_stage(vec![Primitive::Ball {
            idx,
            center,
            radius,
        }])
        .expect("ball primitive over all coordinates")
    }

    /// Largest violation over all primitives.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        let mut buf = Vec::new();
        for stage in &self.stages {
            for p in stage {
                buf.clear();
                buf.extend(p.idx().iter().map(|&j| x[j]));
                worst = worst.max(p.violation_local(&buf));
            }
        }
        worst
    }

    fn project_stage(&self, s: usize, x: &mut [f64], buf: &mut Vec<f64>) -> Result<()> {
        for p in &self.stages[s] {
            buf.clear();
            buf.extend(p.idx().iter().map(|&j| x[j]));
            let proj = p.project_local(buf)?;
            for (&j, v) in p.idx().iter().zip(proj) {
                x[j] = v;
            }
        }
        Ok(())
    }
}

/// Dykstra's alternating projections onto the intersection of the stages of `set`.
pub fn dykstra_project(
    set: &PolyhedralSet,
    v: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    check_len("dykstra input", set.dim, v.len())?;
    let mut x = v.to_vec();
    let mut buf = Vec::new();
    let ns = set.stages.len();
    if ns == 0 {
        return Ok(x);
    }
    if ns == 1 {
        set.project_stage(0, &mut x, &mut buf)?;
        return Ok(x);
    }
    // one correction vector per stage, stored densely
    let mut incr = vec![vec![0.0; set.dim]; ns];
    let mut prev = x.clone();
    let mut y = vec![0.0; set.dim];
    let mut change = f64::INFINITY;
    for _ in 0..max_iter {
        // x can stall while the corrections still move, so both must settle
        let mut incr_change = 0.0_f64;
        for (s, p) in incr.iter_mut().enumerate() {
            for j in 0..set.dim {
                y[j] = x[j] + p[j];
            }
            x.copy_from_slice(&y);
            set.project_stage(s, &mut x, &mut buf)?;
            for j in 0..set.dim {
                let next = y[j] - x[j];
                incr_change = incr_change.max((next - p[j]).abs());
                p[j] = next;
            }
        }
        change = x
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs())
            .fold(incr_change, f64::max);
        prev.copy_from_slice(&x);
        if change <= tol && set.max_violation(&x) <= tol {
            return Ok(x);
        }
    }
    Err(Error::Nonconvergence {
        iters: max_iter,
        change,
    })
}
