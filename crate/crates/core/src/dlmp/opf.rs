//! Lossless branch-flow OPF as a block problem: DSO block plus one block per aggregator.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::network::{NetworkModel, HORIZON};
use crate::block_model::{
    BlockStructure, ProblemSpec, ProxFn, QuadraticSmooth, SetIndicator, SmoothFn, ZeroSmooth,
};
use crate::error::{Error, Result};
use crate::prox_ops::{PolyhedralSet, Primitive};

/// Construction options of the OPF problem.
#[derive(Debug, Clone)]
pub struct OpfOptions {
    /// Bus sets managed by each aggregator; `None` uses [`default_partition`].
    pub aggregators: Option<Vec<Vec<usize>>>,
    /// Keep the shunt terms Gₙvₙ and −Bₙvₙ in the balance rows.
    pub keep_shunt: bool,
    /// Bound on |p₀| and |q₀| at the slack; `None` uses the sum of the slack line caps.
    pub slack_bound: Option<f64>,
}

impl Default for OpfOptions {
    fn default() -> Self {
        Self {
            aggregators: None,
            keep_shunt: true,
            slack_bound: None,
        }
    }
}

/// Partition used when no aggregator sets are given.
///
/// One set per slack feeder, where a feeder that branches has its largest
/// branch split off. The 15-bus network gives {1..6}, {7..11}, {12, 13, 14}.
pub fn default_partition(net: &NetworkModel) -> Vec<Vec<usize>> {
    let subtree = |root: usize| -> Vec<usize> {
        let mut out = vec![root];
        let mut i = 0;
        while i < out.len() {
            out.extend(net.children(out[i]));
            i += 1;
        }
        out.sort_unstable();
        out
    };
    let mut parts = Vec::new();
    for top in net.children(0) {
        let mut cur = top;
        let mut split = None;
        loop {
            let ch = net.children(cur);
            if ch.len() > 1 {
                split = ch.iter().copied().max_by_key(|&c| (subtree(c).len(), c));
                break;
            }
            match ch.first() {
                Some(&c) => cur = c,
                None => break,
            }
        }
        let all = subtree(top);
        match split {
            Some(s) if subtree(s).len() > 1 => {
                let side = subtree(s);
                parts.push(all.iter().copied().filter(|b| !side.contains(b)).collect());
                parts.push(side);
            }
            _ => parts.push(all),
        }
    }
    parts
}

/// Coordinates of the DSO and aggregator variables and of the balance rows.
#[derive(Debug, Clone)]
pub struct OpfLayout {
    pub n: usize,
    /// Buses per aggregator.
    pub aggregators: Vec<Vec<usize>>,
    /// (block, offset of pᶜ_{n,0} within the block) per bus, index n − 1.
    pub bus_slot: Vec<(usize, usize)>,
    /// Offset of (pᵍ_{n,0}, qᵍ_{n,0}) within the aggregator block for renewable buses.
    pub re_slot: Vec<Option<usize>>,
}

impl OpfLayout {
    fn dso_period(&self) -> usize {
        3 * self.n + 2
    }

    /// DSO coordinate of fₙ,ₜ.
    pub fn f(&self, n: usize, t: usize) -> usize {
        t * self.dso_period() + n - 1
    }

    pub fn g(&self, n: usize, t: usize) -> usize {
        t * self.dso_period() + self.n + n - 1
    }

    pub fn v(&self, n: usize, t: usize) -> usize {
        t * self.dso_period() + 2 * self.n + n - 1
    }

    /// Slack active injection p₀,ₜ.
    pub fn p0(&self, t: usize) -> usize {
        t * self.dso_period() + 3 * self.n
    }

    pub fn q0(&self, t: usize) -> usize {
        t * self.dso_period() + 3 * self.n + 1
    }

    pub fn dso_dim(&self) -> usize {
        HORIZON * self.dso_period()
    }

    /// Active balance row of bus n in period t.
    pub fn row_p(&self, n: usize, t: usize) -> usize {
        t * 2 * self.n + n - 1
    }

    /// Reactive balance row of bus n in period t.
    pub fn row_q(&self, n: usize, t: usize) -> usize {
        t * 2 * self.n + self.n + n - 1
    }

    pub fn rows(&self) -> usize {
        2 * self.n * HORIZON
    }

    /// (bus, period, is_reactive) of a balance row.
    pub fn row_owner(&self, row: usize) -> (usize, usize, bool) {
        let t = row / (2 * self.n);
        let r = row % (2 * self.n);
        (r % self.n + 1, t, r >= self.n)
    }
}

/// The OPF block problem with its layout and a feasible starting point.
#[derive(Debug, Clone)]
pub struct OpfProblem {
    pub net: NetworkModel,
    pub layout: OpfLayout,
    pub problem: ProblemSpec,
    pub x0: DVector<f64>,
}

impl OpfProblem {
    /// Number of aggregators p.
    pub fn p(&self) -> usize {
        self.layout.aggregators.len()
    }

    /// Aggregator feasible set of block `a` (1-based block index).
    pub fn aggregator_set(&self, a: usize) -> Result<PolyhedralSet> {
        aggregator_set(&self.net, &self.layout, a - 1)
    }
}

fn dso_set(net: &NetworkModel, layout: &OpfLayout, slack_bound: f64) -> Result<PolyhedralSet> {
    let n = net.n();
    let per = layout.dso_period();
    let mut set = PolyhedralSet::new(layout.dso_dim());
    let mut affine = Vec::new();
    for t in 0..HORIZON {
        let idx: Vec<usize> = (t * per..(t + 1) * per).collect();
        let local = |j: usize| j - t * per;
        let mut c = DMatrix::zeros(n + 2, per);
        let mut d = DVector::zeros(n + 2);
        for bus in &net.buses {
            let k = bus.id - 1;
            c[(k, local(layout.v(bus.id, t)))] = 1.0;
            c[(k, local(layout.f(bus.id, t)))] = -2.0 * bus.r;
            c[(k, local(layout.g(bus.id, t)))] = -2.0 * bus.x;
            match net.parent_of(bus.id) {
                0 => d[k] = net.v0,
                par => c[(k, local(layout.v(par, t)))] = -1.0,
            }
        }
        // the slack absorbs the upward flows of its children
        c[(n, local(layout.p0(t)))] = 1.0;
        c[(n + 1, local(layout.q0(t)))] = 1.0;
        for m in net.children(0) {
            c[(n, local(layout.f(m, t)))] = 1.0;
            c[(n + 1, local(layout.g(m, t)))] = 1.0;
        }
        affine.push(Primitive::affine(idx, c, d)?);
    }
    set.push_stage(affine)?;
    let mut grouped = Vec::new();
    let (mut bidx, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..HORIZON {
        for bus in &net.buses {
            grouped.push(Primitive::Ball {
                idx: vec![layout.f(bus.id, t), layout.g(bus.id, t)],
                center: vec![0.0, 0.0],
                radius: bus.s_max,
            });
            bidx.push(layout.v(bus.id, t));
            lo.push(net.v_lo);
            hi.push(net.v_hi);
        }
        for j in [layout.p0(t), layout.q0(t)] {
            bidx.push(j);
            lo.push(-slack_bound);
            hi.push(slack_bound);
        }
    }
    grouped.push(Primitive::Box { idx: bidx, lo, hi });
    set.push_stage(grouped)?;
    Ok(set)
}

fn aggregator_set(net: &NetworkModel, layout: &OpfLayout, a: usize) -> Result<PolyhedralSet> {
    let buses = &layout.aggregators[a];
    let dim = aggregator_dim(net, buses);
    let mut set = PolyhedralSet::new(dim);
    let mut first = Vec::new();
    let (mut upper, mut lower) = (Vec::new(), Vec::new());
    for &id in buses {
        let bus = net.bus(id);
        let (_, off) = layout.bus_slot[id - 1];
        first.push(Primitive::EnergyBudget {
            idx: (off..off + HORIZON).collect(),
            lo: bus.p_lo.to_vec(),
            hi: bus.p_hi.to_vec(),
            e: bus.energy,
        });
        if let Some(re) = layout.re_slot[id - 1] {
            let (rlo, rhi) = bus.re_ratio;
            for t in 0..HORIZON {
                let (pg, qg) = (re + 2 * t, re + 2 * t + 1);
                first.push(Primitive::Box {
                    idx: vec![pg],
                    lo: vec![0.0],
                    hi: vec![bus.re_cap[t]],
                });
                upper.push(Primitive::Halfspace {
                    idx: vec![pg, qg],
                    a: vec![-rhi, 1.0],
                    c: 0.0,
                });
                lower.push(Primitive::Halfspace {
                    idx: vec![pg, qg],
                    a: vec![rlo, -1.0],
                    c: 0.0,
                });
            }
        }
    }
    set.push_stage(first)?;
    if !upper.is_empty() {
        set.push_stage(upper)?;
        set.push_stage(lower)?;
    }
    Ok(set)
}

fn aggregator_dim(net: &NetworkModel, buses: &[usize]) -> usize {
    buses
        .iter()
        .map(|&id| {
            HORIZON
                + if net.bus(id).has_renewable() {
                    2 * HORIZON
                } else {
                    0
                }
        })
        .sum()
}

/// Builds the DSO/aggregator block problem with b = 0.
pub fn build_opf_problem(net: &NetworkModel, opts: &OpfOptions) -> Result<OpfProblem> {
    net.validate()?;
    let n = net.n();
    let aggregators = opts
        .aggregators
        .clone()
        .unwrap_or_else(|| default_partition(net));
    let mut seen = vec![false; n];
    for &id in aggregators.iter().flatten() {
        if id == 0 || id > n || std::mem::replace(&mut seen[id - 1], true) {
            return Err(Error::Instance(format!(
                "aggregator sets must partition buses 1..={n}"
            )));
        }
    }
    if seen.iter().any(|s| !s) || aggregators.iter().any(|a| a.is_empty()) {
        return Err(Error::Instance(format!(
            "aggregator sets must partition buses 1..={n}"
        )));
    }
    for bus in &net.buses {
        let cap: f64 = bus.p_hi.iter().sum();
        if cap < bus.energy {
            return Err(Error::Instance(format!(
                "bus {}: energy demand {} exceeds capacity {cap}",
                bus.id, bus.energy
            )));
        }
    }
    let mut bus_slot = vec![(0, 0); n];
    let mut re_slot = vec![None; n];
    for (a, buses) in aggregators.iter().enumerate() {
        let mut off = 0;
        for &id in buses {
            bus_slot[id - 1] = (a + 1, off);
            off += HORIZON;
            if net.bus(id).has_renewable() {
                re_slot[id - 1] = Some(off);
                off += 2 * HORIZON;
            }
        }
    }
    let layout = OpfLayout {
        n,
        aggregators: aggregators.clone(),
        bus_slot,
        re_slot,
    };
    let q = layout.rows();
    let slack_bound = opts
        .slack_bound
        .unwrap_or_else(|| net.children(0).iter().map(|&m| net.bus(m).s_max).sum());

    // DSO block
    let m0 = layout.dso_dim();
    let mut a0 = DMatrix::zeros(q, m0);
    for t in 0..HORIZON {
        for bus in &net.buses {
            let id = bus.id;
            a0[(layout.row_p(id, t), layout.f(id, t))] += 1.0;
            a0[(layout.row_q(id, t), layout.g(id, t))] += 1.0;
            let par = net.parent_of(id);
            if par != 0 {
                a0[(layout.row_p(par, t), layout.f(id, t))] -= 1.0;
                a0[(layout.row_q(par, t), layout.g(id, t))] -= 1.0;
            }
            if opts.keep_shunt {
                a0[(layout.row_p(id, t), layout.v(id, t))] += bus.g;
                a0[(layout.row_q(id, t), layout.v(id, t))] -= bus.b;
            }
        }
    }
    let mut h = DMatrix::zeros(m0, m0);
    let mut lin = DVector::zeros(m0);
    for t in 0..HORIZON {
        h[(layout.p0(t), layout.p0(t))] = 2.0 * net.costs[t].quad;
        lin[layout.p0(t)] = net.costs[t].lin;
    }
    let mut smooth: Vec<Arc<dyn SmoothFn>> = vec![Arc::new(QuadraticSmooth::new(h, lin, 0.0)?)];
    let mut prox: Vec<Arc<dyn ProxFn>> = vec![Arc::new(SetIndicator::new(dso_set(
        net,
        &layout,
        slack_bound,
    )?))];
    let mut a_blocks = vec![a0];
    let mut dims = vec![m0];
    let mut x0 = vec![0.0; m0];
    for t in 0..HORIZON {
        for bus in &net.buses {
            x0[layout.v(bus.id, t)] = net.v0;
        }
    }

    for (a, buses) in aggregators.iter().enumerate() {
        let dim = aggregator_dim(net, buses);
        let mut aa = DMatrix::zeros(q, dim);
        let mut mid = vec![0.0; dim];
        for &id in buses {
            let bus = net.bus(id);
            let (_, off) = layout.bus_slot[id - 1];
            for t in 0..HORIZON {
                aa[(layout.row_p(id, t), off + t)] = 1.0;
                aa[(layout.row_q(id, t), off + t)] = bus.tau_c;
                mid[off + t] = 0.5 * (bus.p_lo[t] + bus.p_hi[t]);
            }
            if let Some(re) = layout.re_slot[id - 1] {
                for t in 0..HORIZON {
                    aa[(layout.row_p(id, t), re + 2 * t)] = -1.0;
                    aa[(layout.row_q(id, t), re + 2 * t + 1)] = -1.0;
                }
            }
        }
        let set = aggregator_set(net, &layout, a)?;
        let indicator = SetIndicator::new(set);
        let mut start = vec![0.0; dim];
        indicator.prox(&vec![1.0; dim], &mid, &mut start)?;
        x0.extend(start);
        smooth.push(Arc::new(ZeroSmooth { dim }));
        prox.push(Arc::new(indicator));
        a_blocks.push(aa);
        dims.push(dim);
    }
    let problem = ProblemSpec::new(
        BlockStructure::new(dims)?,
        smooth,
        prox,
        a_blocks,
        DVector::zeros(q),
    )?;
    Ok(OpfProblem {
        net: net.clone(),
        layout,
        problem,
        x0: DVector::from_vec(x0),
    })
}

/// Price pair of one bus and period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dlmp {
    pub bus: usize,
    pub period: usize,
    pub y_p: f64,
    pub y_q: f64,
}

/// Reads the balance-row multipliers back as per-bus, per-period prices, ordered by (bus, period).
pub fn extract_dlmp(y: &[f64], layout: &OpfLayout) -> Result<Vec<Dlmp>> {
    crate::error::check_len("dual vector", layout.rows(), y.len())?;
    let mut out = Vec::with_capacity(layout.n * HORIZON);
    for bus in 1..=layout.n {
        for t in 0..HORIZON {
            out.push(Dlmp {
                bus,
                period: t,
                y_p: y[layout.row_p(bus, t)],
                y_q: y[layout.row_q(bus, t)],
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_partition_of_network15() {
        let net = NetworkModel::network15();
        let parts = default_partition(&net);
        assert_eq!(
            parts,
            vec![
                vec![1, 2, 3, 4, 5, 6],
                vec![7, 8, 9, 10, 11],
                vec![12, 13, 14]
            ]
        );
    }

    #[test]
    fn dimensions_of_network15() {
        let opf = build_opf_problem(&NetworkModel::network15(), &OpfOptions::default()).unwrap();
        assert_eq!(opf.problem.q(), 56);
        assert_eq!(opf.problem.d(), 4);
        assert_eq!(opf.layout.dso_dim(), 88);
        // 14 buses × 2 periods of consumption plus 4 renewable coordinates at bus 11
        assert_eq!(opf.problem.m(), 88 + 28 + 4);
        assert!(opf.problem.eval_psi(opf.x0.as_slice()).unwrap().is_finite());
    }

    #[test]
    fn rows_map_back_bijectively() {
        let opf = build_opf_problem(&NetworkModel::network15(), &OpfOptions::default()).unwrap();
        let l = &opf.layout;
        let mut hit = vec![0; l.rows()];
        for bus in 1..=l.n {
            for t in 0..HORIZON {
                hit[l.row_p(bus, t)] += 1;
                hit[l.row_q(bus, t)] += 1;
                assert_eq!(l.row_owner(l.row_p(bus, t)), (bus, t, false));
                assert_eq!(l.row_owner(l.row_q(bus, t)), (bus, t, true));
            }
        }
        assert!(hit.iter().all(|&h| h == 1));
    }

    #[test]
    fn overdemanding_bus_is_rejected() {
        let mut net = NetworkModel::toy(0.5);
        net.buses[0].energy = 5.0;
        assert!(matches!(
            build_opf_problem(&net, &OpfOptions::default()),
            Err(Error::Instance(_))
        ));
    }
}
