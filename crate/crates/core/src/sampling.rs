//! Proper random samplings over blocks.
//!
//! A [`Sampling`] draws a random subset ι ⊆ [d] per iteration. Every kind
//! here has a finite support Σ; it is stored explicitly whenever |Σ| stays
//! below [`MAX_SUPPORT`], which enables exact probability matrices, the Ξ
//! matrix by enumeration and exhaustive conditional expectations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::block_model::BlockStructure;
use crate::error::{check_len, Error, Result};

/// Largest support that is stored and enumerated explicitly.
pub const MAX_SUPPORT: usize = 10_000;

const PROB_TOL: f64 = 1e-12;

/// Sampling family.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingKind {
    /// Exactly one block, block i with probability pᵢ.
    SingleCoordinate(Vec<f64>),
    /// A uniformly random subset of exactly `m` blocks.
    Nice(usize),
    /// Every block independently with probability p (the empty set included).
    Uniform(f64),
    /// All blocks every iteration.
    Full,
    /// Block 0 together with one of blocks 1..=p chosen uniformly.
    PairedDso(usize),
    /// User-supplied support with probabilities.
    Explicit,
}

/// One realization ι of the sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Activation {
    mask: Vec<bool>,
    list: Vec<usize>,
}

impl Activation {
    pub fn from_indices(d: usize, idx: &[usize]) -> Result<Self> {
        let mut mask = vec![false; d];
        for &i in idx {
            if i >= d {
                return Err(Error::Instance(format!(
                    "block index {i} out of range for d = {d}"
                )));
            }
            if mask[i] {
                return Err(Error::Instance(format!("block {i} listed twice")));
            }
            mask[i] = true;
        }
        let list = (0..d).filter(|&i| mask[i]).collect();
        Ok(Self { mask, list })
    }

    pub fn full(d: usize) -> Self {
        Self {
            mask: vec![true; d],
            list: (0..d).collect(),
        }
    }

    /// Active blocks in increasing order.
    pub fn indices(&self) -> &[usize] {
        &self.list
    }

    pub fn contains(&self, i: usize) -> bool {
        self.mask[i]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }
}

/// A proper sampling with marginals π and optional explicit support.
#[derive(Debug, Clone)]
pub struct Sampling {
    d: usize,
    kind: SamplingKind,
    support: Option<Vec<(Activation, f64)>>,
    pi: Vec<f64>,
    cdf: Vec<f64>,
}

impl Sampling {
    fn finish(
        d: usize,
        kind: SamplingKind,
        support: Option<Vec<(Activation, f64)>>,
        pi: Vec<f64>,
    ) -> Result<Self> {
        if pi.iter().any(|&p| !(p > 0.0 && p <= 1.0 + PROB_TOL)) {
            return Err(Error::Instance(
                "sampling is not proper: some πᵢ ∉ (0, 1]".into(),
            ));
        }
        let mut cdf = Vec::new();
        if let Some(sup) = &support {
            let total: f64 = sup.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::Instance(format!(
                    "support probabilities sum to {total}"
                )));
            }
            let mut acc = 0.0;
            for (_, p) in sup {
                acc += p;
                cdf.push(acc);
            }
            for (i, &p) in pi.iter().enumerate() {
                let from_support: f64 = sup
                    .iter()
                    .filter(|(s, _)| s.contains(i))
                    .map(|(_, q)| q)
                    .sum();
                if (from_support - p).abs() > PROB_TOL {
                    return Err(Error::Instance(format!(
                        "π inconsistent with support at block {i}"
                    )));
                }
            }
        }
        Ok(Self {
            d,
            kind,
            support,
            pi,
            cdf,
        })
    }

    pub fn single_coordinate(probs: Vec<f64>) -> Result<Self> {
        let d = probs.len();
        if d == 0 {
            return Err(Error::Instance("sampling needs at least one block".into()));
        }
        let support = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| Ok((Activation::from_indices(d, &[i])?, p)))
            .collect::<Result<Vec<_>>>()?;
        Self::finish(
            d,
            SamplingKind::SingleCoordinate(probs.clone()),
            Some(support),
            probs,
        )
    }

    pub fn single_uniform(d: usize) -> Result<Self> {
        Self::single_coordinate(vec![1.0 / d as f64; d])
    }

    pub fn nice(d: usize, m: usize) -> Result<Self> {
        if m == 0 || m > d {
            return Err(Error::Instance(format!(
                "{m}-nice sampling needs 1 ≤ m ≤ d = {d}"
            )));
        }
        let count = binomial(d, m);
        let support = if count <= MAX_SUPPORT as f64 {
            let p = 1.0 / count;
            let mut out = Vec::with_capacity(count as usize);
            let mut comb: Vec<usize> = (0..m).collect();
            loop {
                out.push((Activation::from_indices(d, &comb)?, p));
                if !next_combination(&mut comb, d) {
                    break;
                }
            }
            Some(out)
        } else {
            None
        };
        Self::finish(
            d,
            SamplingKind::Nice(m),
            support,
            vec![m as f64 / d as f64; d],
        )
    }

    /// Independent Bernoulli(p) activation of every block.
    pub fn uniform(d: usize, p: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Instance(format!(
                "activation probability {p} ∉ (0, 1]"
            )));
        }
        let support = if d < 63 && (1usize << d) <= MAX_SUPPORT {
            let mut out = Vec::with_capacity(1 << d);
            for bits in 0..(1usize << d) {
                let idx: Vec<usize> = (0..d).filter(|&i| bits >> i & 1 == 1).collect();
                let k = idx.len() as i32;
                let prob = p.powi(k) * (1.0 - p).powi(d as i32 - k);
                out.push((Activation::from_indices(d, &idx)?, prob));
            }
            Some(out)
        } else {
            None
        };
        Self::finish(d, SamplingKind::Uniform(p), support, vec![p; d])
    }

    pub fn full(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Instance("sampling needs at least one block".into()));
        }
        Self::finish(
            d,
            SamplingKind::Full,
            Some(vec![(Activation::full(d), 1.0)]),
            vec![1.0; d],
        )
    }

    /// Pairs {0, a}, a ∈ 1..=p, each with probability 1/p.
    pub fn paired_dso(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::Instance(
                "paired sampling needs at least one aggregator".into(),
            ));
        }
        let d = p + 1;
        let support = (1..=p)
            .map(|a| Ok((Activation::from_indices(d, &[0, a])?, 1.0 / p as f64)))
            .collect::<Result<Vec<_>>>()?;
        let mut pi = vec![1.0 / p as f64; d];
        pi[0] = 1.0;
        Self::finish(d, SamplingKind::PairedDso(p), Some(support), pi)
    }

    pub fn explicit(d: usize, support: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        if support.len() > MAX_SUPPORT {
            return Err(Error::Unsupported(format!(
                "explicit support larger than {MAX_SUPPORT}"
            )));
        }
        let mut pi = vec![0.0; d];
        let mut sup = Vec::with_capacity(support.len());
        for (idx, p) in support {
            if !(p >= 0.0) {
                return Err(Error::Instance("negative support probability".into()));
            }
            for &i in &idx {
                if i < d {
                    pi[i] += p;
                }
            }
            sup.push((Activation::from_indices(d, &idx)?, p));
        }
        Self::finish(d, SamplingKind::Explicit, Some(sup), pi)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> &SamplingKind {
        &self.kind
    }

    /// Marginals πᵢ = P(i ∈ ι).
    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn pi_min(&self) -> f64 {
        self.pi.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True when all marginals coincide.
    pub fn is_uniform(&self) -> bool {
        let p0 = self.pi[0];
        self.pi.iter().all(|p| (p - p0).abs() <= PROB_TOL)
    }

    pub fn support(&self) -> Option<&[(Activation, f64)]> {
        self.support.as_deref()
    }

    /// Draws one realization.
    ///
    /// Each kind consumes a fixed number of random values per call, so a
    /// trajectory does not depend on what else the caller computes.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Activation {
        match &self.kind {
            SamplingKind::Full => Activation::full(self.d),
            SamplingKind::PairedDso(p) => {
                let a = rng.random_range(1..=*p);
                Activation::from_indices(self.d, &[0, a]).expect("pair within range")
            }
            SamplingKind::Nice(m) => {
                let mut perm: Vec<usize> = (0..self.d).collect();
                for j in 0..*m {
                    let r = rng.random_range(j..self.d);
                    perm.swap(j, r);
                }
                Activation::from_indices(self.d, &perm[..*m]).expect("distinct indices")
            }
            SamplingKind::Uniform(p) => {
                let idx: Vec<usize> = (0..self.d).filter(|_| rng.random::<f64>() < *p).collect();
                Activation::from_indices(self.d, &idx).expect("distinct indices")
            }
            SamplingKind::SingleCoordinate(_) | SamplingKind::Explicit => {
                let support = self.support.as_ref().expect("enumerated support");
                let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
                let pos = self.cdf.partition_point(|&c| c <= u).min(support.len() - 1);
                support[pos].0.clone()
            }
        }
    }

    /// Π with Πᵢⱼ = P({i, j} ⊆ ι).
    pub fn prob_matrix(&self) -> DMatrix<f64> {
        let d = self.d;
        if let Some(sup) = &self.support {
            let mut pm = DMatrix::zeros(d, d);
            for (s, p) in sup {
                for &i in s.indices() {
                    for &j in s.indices() {
                        pm[(i, j)] += p;
                    }
                }
            }
            return pm;
        }
        let (diag, off) = match self.kind {
            SamplingKind::Nice(m) => {
                let (m, d) = (m as f64, d as f64);
                (m / d, m * (m - 1.0) / (d * (d - 1.0)))
            }
            SamplingKind::Uniform(p) => (p, p * p),
            _ => unreachable!("only nice and uniform samplings may lack an explicit support"),
        };
        DMatrix::from_fn(d, d, |i, j| if i == j { diag } else { off })
    }

    /// Smallest eigenvalue of Π; strictly positive for samplings with Π ≻ 0.
    pub fn prob_matrix_min_eig(&self) -> f64 {
        crate::linalg::min_eig(&self.prob_matrix())
    }

    /// Diagonal of P = blkdiag(πᵢ⁻¹ I) expanded over coordinates.
    pub fn weight_diag(&self, blocks: &BlockStructure) -> Result<DVector<f64>> {
        check_len("sampling block count", self.d, blocks.d())?;
        let mut out = DVector::zeros(blocks.m());
        for i in 0..self.d {
            for j in blocks.range(i) {
                out[j] = 1.0 / self.pi[i];
            }
        }
        Ok(out)
    }

    /// Ξ = E[E P AᵀA P E] by enumeration of the support.
    pub fn xi_exhaustive(
        &self,
        blocks: &BlockStructure,
        a: &[DMatrix<f64>],
    ) -> Result<DMatrix<f64>> {
        check_len("constraint blocks", self.d, a.len())?;
        let sup = self
            .support
            .as_ref()
            .ok_or_else(|| Error::Unsupported("support is not enumerable".into()))?;
        let m = blocks.m();
        let q = a.first().map_or(0, |ai| ai.nrows());
        let mut xi = DMatrix::zeros(m, m);
        for (s, p) in sup {
            if *p == 0.0 {
                continue;
            }
            // A P E_S as a q × m matrix
            let mut ape = DMatrix::zeros(q, m);
            for &i in s.indices() {
                ape.columns_mut(blocks.offsets()[i], blocks.dim(i))
                    .copy_from(&(&a[i] / self.pi[i]));
            }
            xi += ape.transpose() * &ape * *p;
        }
        Ok(xi)
    }

    /// Ξ from the block formula Ξᵢⱼ = Πᵢⱼ/(πᵢπⱼ) AᵢᵀAⱼ.
    pub fn xi_matrix(&self, blocks: &BlockStructure, a: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
        check_len("constraint blocks", self.d, a.len())?;
        let pm = self.prob_matrix();
        let m = blocks.m();
        let mut xi = DMatrix::zeros(m, m);
        for i in 0..self.d {
            for j in 0..self.d {
                let w = pm[(i, j)] / (self.pi[i] * self.pi[j]);
                if w == 0.0 {
                    continue;
                }
                let blk = a[i].transpose() * &a[j] * w;
                xi.view_mut(
                    (blocks.offsets()[i], blocks.offsets()[j]),
                    (blocks.dim(i), blocks.dim(j)),
                )
                .copy_from(&blk);
            }
        }
        Ok(xi)
    }

    /// Σ_S P(S) f(S) over the explicit support.
    pub fn expectation<F>(&self, mut f: F) -> Result<f64>
    where
        F: FnMut(&Activation) -> Result<f64>,
    {
        let sup = self
            .support
            .as_ref()
            .ok_or_else(|| Error::Unsupported("support is not enumerable".into()))?;
        let mut total = 0.0;
        for (s, p) in sup {
            if *p > 0.0 {
                total += p * f(s)?;
            }
        }
        Ok(total)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k)
        .fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
        .round()
}

/// Advances `comb` to the next k-subset of 0..n in lexicographic order.
fn next_combination(comb: &mut [usize], n: usize) -> bool {
    let k = comb.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if comb[i] < n - k + i {
            comb[i] += 1;
            for j in i + 1..k {
                comb[j] = comb[j - 1] + 1;
            }
            return true;
        }
    }
    false
}
