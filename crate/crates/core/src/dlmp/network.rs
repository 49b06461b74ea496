//! Radial network data and CSV ingestion.

use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Number of periods carried by the network files.
pub const HORIZON: usize = 2;

const NETWORK15_CSV: &str = include_str!("../../data/network15.csv");
const EDGES15_CSV: &str = include_str!("../../data/edges15.csv");

/// Line and load data of bus n; the line is the branch (n, parent(n)).
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    /// Flow magnitude bound S̄ₙ.
    pub s_max: f64,
    pub r: f64,
    pub x: f64,
    /// Shunt susceptance Bₙ.
    pub b: f64,
    /// Conductance Gₙ (absent from the data files, zero by default).
    pub g: f64,
    pub p_lo: [f64; HORIZON],
    pub p_hi: [f64; HORIZON],
    /// Energy demand Eₙ over the horizon.
    pub energy: f64,
    /// Reactive-to-active consumption ratio τᶜₙ.
    pub tau_c: f64,
    /// Renewable production caps per period (zero when the bus has none).
    pub re_cap: [f64; HORIZON],
    /// Reactive-to-active production ratio bounds.
    pub re_ratio: (f64, f64),
}

impl Bus {
    pub fn has_renewable(&self) -> bool {
        self.re_cap.iter().any(|&c| c > 0.0)
    }
}

/// Slack cost cₜ(p) = lin·p + quad·p².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackCost {
    pub lin: f64,
    pub quad: f64,
}

impl SlackCost {
    pub fn value(&self, p: f64) -> f64 {
        self.lin * p + self.quad * p * p
    }

    pub fn marginal(&self, p: f64) -> f64 {
        self.lin + 2.0 * self.quad * p
    }
}

/// Radial distribution network over a two-period horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    /// Buses 1..=N stored at index n − 1.
    pub buses: Vec<Bus>,
    /// parent[n − 1] is the parent of bus n (0 is the slack).
    pub parent: Vec<usize>,
    /// Bounds on the squared voltage magnitude.
    pub v_lo: f64,
    pub v_hi: f64,
    /// Squared slack voltage.
    pub v0: f64,
    pub costs: [SlackCost; HORIZON],
}

#[derive(Debug, Deserialize)]
struct BusRow {
    n: usize,
    #[serde(rename = "S")]
    s: f64,
    #[serde(rename = "R_e3")]
    r_e3: f64,
    #[serde(rename = "X_e3")]
    x_e3: f64,
    #[serde(rename = "B_e3")]
    b_e3: f64,
    #[serde(rename = "P_lo_0")]
    p_lo_0: f64,
    #[serde(rename = "P_lo_1")]
    p_lo_1: f64,
    #[serde(rename = "P_hi_0")]
    p_hi_0: f64,
    #[serde(rename = "P_hi_1")]
    p_hi_1: f64,
    #[serde(rename = "E")]
    e: f64,
    tau_c: f64,
    #[serde(default)]
    re_cap_0: f64,
    #[serde(default)]
    re_cap_1: f64,
}

#[derive(Debug, Deserialize)]
struct EdgeRow {
    parent: usize,
    child: usize,
}

fn parse_rows<T: for<'de> Deserialize<'de>>(src: impl Read, what: &str) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(src);
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Ingest(format!("{what}: {e}"))))
        .collect()
}

impl NetworkModel {
    /// Builds a model from CSV sources, validating the tree and the data.
    pub fn from_readers(network: impl Read, edges: impl Read) -> Result<Self> {
        let rows: Vec<BusRow> = parse_rows(network, "network file")?;
        let edges: Vec<EdgeRow> = parse_rows(edges, "edges file")?;
        let n = rows.len();
        if n == 0 {
            return Err(Error::Ingest("network file has no buses".into()));
        }
        let mut buses: Vec<Option<Bus>> = vec![None; n];
        for row in rows {
            if row.n == 0 || row.n > n {
                return Err(Error::Ingest(format!("bus id {} outside 1..={n}", row.n)));
            }
            if buses[row.n - 1].is_some() {
                return Err(Error::Ingest(format!("bus {} listed twice", row.n)));
            }
            buses[row.n - 1] = Some(Bus {
                id: row.n,
                s_max: row.s,
                r: row.r_e3 * 1e-3,
                x: row.x_e3 * 1e-3,
                b: row.b_e3 * 1e-3,
                g: 0.0,
                p_lo: [row.p_lo_0, row.p_lo_1],
                p_hi: [row.p_hi_0, row.p_hi_1],
                energy: row.e,
                tau_c: row.tau_c,
                re_cap: [row.re_cap_0, row.re_cap_1],
                re_ratio: (0.0, 0.0),
            });
        }
        let buses: Vec<Bus> = buses
            .into_iter()
            .map(|b| b.expect("every id filled"))
            .collect();
        let mut parent = vec![usize::MAX; n];
        for e in &edges {
            if e.child == 0 || e.child > n || e.parent > n {
                return Err(Error::Ingest(format!(
                    "edge ({}, {}) references an unknown bus",
                    e.parent, e.child
                )));
            }
            if parent[e.child - 1] != usize::MAX {
                return Err(Error::Ingest(format!("bus {} has two parents", e.child)));
            }
            parent[e.child - 1] = e.parent;
        }
        let model = Self {
            buses,
            parent,
            v_lo: 0.81,
            v_hi: 1.21,
            v0: 1.0,
            costs: [
                SlackCost {
                    lin: 2.0,
                    quad: 1.0,
                },
                SlackCost {
                    lin: 1.0,
                    quad: 0.0,
                },
            ],
        };
        model.validate()?;
        Ok(model)
    }

    /// The 15-bus test network (slack plus 14 buses).
    pub fn network15() -> Self {
        Self::from_readers(NETWORK15_CSV.as_bytes(), EDGES15_CSV.as_bytes())
            .expect("bundled network data is valid")
    }

    /// One bus behind a single line with demand fixed at `demand` in both periods.
    pub fn toy(demand: f64) -> Self {
        Self {
            buses: vec![Bus {
                id: 1,
                s_max: 2.0,
                r: 1e-3,
                x: 0.12,
                b: 0.0,
                g: 0.0,
                p_lo: [demand; HORIZON],
                p_hi: [demand; HORIZON],
                energy: 2.0 * demand,
                tau_c: 0.0,
                re_cap: [0.0; HORIZON],
                re_ratio: (0.0, 0.0),
            }],
            parent: vec![0],
            v_lo: 0.81,
            v_hi: 1.21,
            v0: 1.0,
            costs: [
                SlackCost {
                    lin: 2.0,
                    quad: 1.0,
                },
                SlackCost {
                    lin: 1.0,
                    quad: 0.0,
                },
            ],
        }
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn bus(&self, id: usize) -> &Bus {
        &self.buses[id - 1]
    }

    pub fn parent_of(&self, id: usize) -> usize {
        self.parent[id - 1]
    }

    /// Buses whose parent is `id`.
    pub fn children(&self, id: usize) -> Vec<usize> {
        (1..=self.n())
            .filter(|&m| self.parent_of(m) == id)
            .collect()
    }

    /// Checks the tree structure and the per-bus data.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.parent.len() != n {
            return Err(Error::Ingest(
                "parent map length differs from bus count".into(),
            ));
        }
        if let Some(k) = self.parent.iter().position(|&p| p == usize::MAX) {
            return Err(Error::Ingest(format!("bus {} has no parent edge", k + 1)));
        }
        for start in 1..=n {
            let mut cur = start;
            let mut steps = 0;
            while cur != 0 {
                cur = self.parent_of(cur);
                steps += 1;
                if steps > n {
                    return Err(Error::Ingest(format!(
                        "edges contain a cycle through bus {start}"
                    )));
                }
            }
        }
        if !(self.v_lo <= self.v0 && self.v0 <= self.v_hi) {
            return Err(Error::Ingest(
                "slack voltage outside the voltage bounds".into(),
            ));
        }
        for bus in &self.buses {
            let finite = [bus.s_max, bus.r, bus.x, bus.b, bus.energy, bus.tau_c]
                .iter()
                .chain(&bus.p_lo)
                .chain(&bus.p_hi)
                .chain(&bus.re_cap)
                .all(|v| v.is_finite());
            if !finite || bus.s_max <= 0.0 || bus.r < 0.0 || bus.x < 0.0 {
                return Err(Error::Ingest(format!(
                    "bus {} has invalid line data",
                    bus.id
                )));
            }
            if bus.p_lo.iter().zip(&bus.p_hi).any(|(l, h)| l > h)
                || bus.re_cap.iter().any(|&c| c < 0.0)
            {
                return Err(Error::Ingest(format!(
                    "bus {} has inverted power bounds",
                    bus.id
                )));
            }
            if bus.re_ratio.0 > bus.re_ratio.1 {
                return Err(Error::Ingest(format!(
                    "bus {} has inverted ratio bounds",
                    bus.id
                )));
            }
        }
        Ok(())
    }
}

/// Reads the network and edge CSV files.
pub fn load_network(network: impl AsRef<Path>, edges: impl AsRef<Path>) -> Result<NetworkModel> {
    let open = |p: &Path| {
        std::fs::File::open(p).map_err(|e| Error::Ingest(format!("{}: {e}", p.display())))
    };
    NetworkModel::from_readers(open(network.as_ref())?, open(edges.as_ref())?)
}
