//! Grid data model: one slack bus, `N` PQ buses and conductive branches.
//!
//! Bus `0` is always the slack bus and carries the fixed voltage `v0`.
//! PQ buses are numbered `1..=N` contiguously. A [`Network`] is validated
//! once at construction and immutable afterwards.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, VecDeque};
use thiserror::Error;

/// Index of the slack bus.
pub const SLACK: usize = 0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("SchemaError: {0}")]
    Schema(String),
    #[error("TopologyError: {0}")]
    Topology(String),
    #[error("ValueError: {0}")]
    Value(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BusKind {
    Slack { voltage: f64 },
    Pq { injection: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
}

impl Bus {
    /// Power injection `p_n` for a PQ bus; `None` for the slack.
    pub fn injection(&self) -> Option<f64> {
        match self.kind {
            BusKind::Pq { injection } => Some(injection),
            BusKind::Slack { .. } => None,
        }
    }

    pub fn voltage_setpoint(&self) -> Option<f64> {
        match self.kind {
            BusKind::Slack { voltage } => Some(voltage),
            BusKind::Pq { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub conductance: f64,
    pub current_limit: f64,
}

impl Branch {
    /// The endpoint opposite to `bus`.
    pub fn other(&self, bus: usize) -> usize {
        if self.from == bus {
            self.to
        } else {
            self.from
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityLimits {
    pub v_min: f64,
    pub v_max: f64,
}

/// Outcome of the voltage-ordering hypothesis `2 v_min > v_max > v0 > v_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub holds: bool,
    /// `(2 v_min - v_max, v_max - v0, v0 - v_min)`; all positive iff `holds`.
    pub margins: [f64; 3],
}

/// A neighbor entry of the adjacency list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub bus: usize,
    pub branch: usize,
    pub conductance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    adjacency: Vec<Vec<Neighbor>>,
    limits: SecurityLimits,
}

/// On-disk grid description. Bus 0 is the implicit slack; `buses` lists PQ
/// buses only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub v0: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub buses: Vec<GridBus>,
    pub branches: Vec<GridBranch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBus {
    pub id: i64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBranch {
    pub from: i64,
    pub to: i64,
    pub g: f64,
    pub i_max: f64,
}

fn positive(name: &str, x: f64) -> Result<(), NetworkError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(NetworkError::Value(format!("{name} must be positive and finite, got {x}")))
    }
}

impl Network {
    /// Builds and validates a network.
    ///
    /// `injections[n - 1]` is `p_n`; branches are given as
    /// `(from, to, conductance, current_limit)`.
    pub fn new(
        v0: f64,
        injections: &[f64],
        branches: &[(usize, usize, f64, f64)],
        limits: SecurityLimits,
    ) -> Result<Self, NetworkError> {
        positive("v0", v0)?;
        positive("v_min", limits.v_min)?;
        positive("v_max", limits.v_max)?;
        if limits.v_min >= limits.v_max {
            return Err(NetworkError::Value(format!(
                "v_min ({}) must be below v_max ({})",
                limits.v_min, limits.v_max
            )));
        }
        if injections.is_empty() {
            return Err(NetworkError::Topology("no PQ buses".into()));
        }
        if let Some(p) = injections.iter().find(|p| !p.is_finite()) {
            return Err(NetworkError::Value(format!("injection must be finite, got {p}")));
        }

        let n_bus = injections.len() + 1;
        let mut buses = Vec::with_capacity(n_bus);
        buses.push(Bus { id: SLACK, kind: BusKind::Slack { voltage: v0 } });
        buses.extend(
            injections
                .iter()
                .enumerate()
                .map(|(i, &p)| Bus { id: i + 1, kind: BusKind::Pq { injection: p } }),
        );

        let mut seen = BTreeSet::new();
        let mut adjacency = vec![Vec::new(); n_bus];
        let mut out = Vec::with_capacity(branches.len());
        for (idx, &(from, to, g, i_max)) in branches.iter().enumerate() {
            if from >= n_bus || to >= n_bus {
                return Err(NetworkError::Topology(format!(
                    "branch {from}-{to} references an unknown bus"
                )));
            }
            if from == to {
                return Err(NetworkError::Topology(format!("branch {from}-{to} is a self-loop")));
            }
            positive(&format!("conductance of branch {from}-{to}"), g)?;
            positive(&format!("current limit of branch {from}-{to}"), i_max)?;
            if !seen.insert((from.min(to), from.max(to))) {
                return Err(NetworkError::Topology(format!("duplicate branch {from}-{to}")));
            }
            adjacency[from].push(Neighbor { bus: to, branch: idx, conductance: g });
            adjacency[to].push(Neighbor { bus: from, branch: idx, conductance: g });
            out.push(Branch { from, to, conductance: g, current_limit: i_max });
        }
        for list in &mut adjacency {
            list.sort_by_key(|nb| nb.bus);
        }

        let net = Network { buses, branches: out, adjacency, limits };
        if !net.is_connected() {
            return Err(NetworkError::Topology("disconnected".into()));
        }
        Ok(net)
    }

    fn is_connected(&self) -> bool {
        let mut visited = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([SLACK]);
        visited[SLACK] = true;
        while let Some(n) = queue.pop_front() {
            for nb in &self.adjacency[n] {
                if !visited[nb.bus] {
                    visited[nb.bus] = true;
                    queue.push_back(nb.bus);
                }
            }
        }
        visited.into_iter().all(|v| v)
    }

    pub fn from_grid(grid: &GridFile) -> Result<Self, NetworkError> {
        let n = grid.buses.len();
        let mut injections = vec![None; n];
        for bus in &grid.buses {
            match bus.id {
                0 => return Err(NetworkError::Topology("multiple slack buses: bus 0 is implicit".into())),
                id if id < 0 || id as usize > n => {
                    return Err(NetworkError::Topology(format!(
                        "PQ bus ids must be contiguous 1..={n}, got {id}"
                    )))
                }
                id => {
                    let slot = &mut injections[id as usize - 1];
                    if slot.is_some() {
                        return Err(NetworkError::Topology(format!("duplicate bus id {id}")));
                    }
                    *slot = Some(bus.p);
                }
            }
        }
        // every slot is filled: n distinct ids drawn from 1..=n
        let injections: Vec<f64> = injections.into_iter().map(|p| p.unwrap_or_default()).collect();

        let mut branches = Vec::with_capacity(grid.branches.len());
        for br in &grid.branches {
            if br.from < 0 || br.to < 0 {
                return Err(NetworkError::Topology(format!(
                    "branch {}-{} references an unknown bus",
                    br.from, br.to
                )));
            }
            branches.push((br.from as usize, br.to as usize, br.g, br.i_max));
        }
        Network::new(grid.v0, &injections, &branches, SecurityLimits { v_min: grid.v_min, v_max: grid.v_max })
    }

    pub fn to_grid(&self) -> GridFile {
        GridFile {
            v0: self.v0(),
            v_min: self.limits.v_min,
            v_max: self.limits.v_max,
            buses: (1..=self.n_pq()).map(|n| GridBus { id: n as i64, p: self.injection(n) }).collect(),
            branches: self
                .branches
                .iter()
                .map(|b| GridBranch { from: b.from as i64, to: b.to as i64, g: b.conductance, i_max: b.current_limit })
                .collect(),
        }
    }

    /// Canonical JSON form of the grid file.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_grid()).expect("grid serialization cannot fail")
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn limits(&self) -> SecurityLimits {
        self.limits
    }

    /// Number of PQ buses `N`.
    pub fn n_pq(&self) -> usize {
        self.buses.len() - 1
    }

    pub fn v0(&self) -> f64 {
        self.buses[SLACK].voltage_setpoint().expect("bus 0 is the slack")
    }

    /// `p_n` for PQ bus `n` (1-based).
    pub fn injection(&self, n: usize) -> f64 {
        self.buses[n].injection().expect("PQ bus index")
    }

    pub fn injections(&self) -> Vec<f64> {
        (1..=self.n_pq()).map(|n| self.injection(n)).collect()
    }

    /// Neighbor set `K(n)`, sorted by bus id.
    pub fn neighbors(&self, n: usize) -> &[Neighbor] {
        &self.adjacency[n]
    }

    /// `K(n) \ {0}`.
    pub fn pq_neighbors(&self, n: usize) -> impl Iterator<Item = &Neighbor> {
        self.adjacency[n].iter().filter(|nb| nb.bus != SLACK)
    }

    /// `Σ_{k ∈ K(n)} g_nk`.
    pub fn total_conductance(&self, n: usize) -> f64 {
        self.adjacency[n].iter().map(|nb| nb.conductance).sum()
    }

    /// `g_n0 · I_K(n)(0)`: conductance to the slack, zero if not adjacent.
    pub fn slack_conductance(&self, n: usize) -> f64 {
        self.adjacency[n].iter().find(|nb| nb.bus == SLACK).map_or(0.0, |nb| nb.conductance)
    }

    /// Indicator `I_K(n)(0)`.
    pub fn touches_slack(&self, n: usize) -> bool {
        self.adjacency[n].iter().any(|nb| nb.bus == SLACK)
    }

    pub fn conductance(&self, n: usize, k: usize) -> Option<f64> {
        self.adjacency[n].iter().find(|nb| nb.bus == k).map(|nb| nb.conductance)
    }

    /// Same grid with every injection multiplied by `factor`.
    pub fn scaled_injections(&self, factor: f64) -> Result<Network, NetworkError> {
        let mut net = self.clone();
        for bus in &mut net.buses {
            if let BusKind::Pq { injection } = &mut bus.kind {
                *injection *= factor;
                if !injection.is_finite() {
                    return Err(NetworkError::Value("scaled injection is not finite".into()));
                }
            }
        }
        Ok(net)
    }

    /// Same grid with different voltage limits.
    pub fn with_limits(&self, limits: SecurityLimits) -> Result<Network, NetworkError> {
        let branches: Vec<_> =
            self.branches.iter().map(|b| (b.from, b.to, b.conductance, b.current_limit)).collect();
        Network::new(self.v0(), &self.injections(), &branches, limits)
    }
}

pub fn parse_network(text: &str) -> Result<Network, NetworkError> {
    let grid: GridFile = serde_json::from_str(text).map_err(|e| NetworkError::Schema(e.to_string()))?;
    Network::from_grid(&grid)
}

pub fn check_condition1(net: &Network) -> Verdict {
    let SecurityLimits { v_min, v_max } = net.limits();
    let v0 = net.v0();
    let margins = [2.0 * v_min - v_max, v_max - v0, v0 - v_min];
    Verdict { holds: margins.iter().all(|&m| m > 0.0), margins }
}
