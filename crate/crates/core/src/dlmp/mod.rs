//! Distribution locational marginal prices on a radial network.
//!
//! The lossless branch-flow OPF is split into a DSO block (flows, squared
//! voltages, slack injections) and one block per load aggregator. The
//! active and reactive balance rows form the coupling constraint, and their
//! multipliers are the prices.

mod network;
mod opf;
mod ppdlmp;

pub use network::{load_network, Bus, NetworkModel, SlackCost, HORIZON};
pub use opf::{
    build_opf_problem, default_partition, extract_dlmp, Dlmp, OpfLayout, OpfOptions, OpfProblem,
};
pub use ppdlmp::{twin_run, Ppdlmp, PpdlmpState};
