//! Network description: parsed case data, admittance matrices and the
//! per-branch two-port model used by the measurement functions.

mod matpower;
mod ybus;

pub use matpower::parse_matpower_case;
pub use ybus::{branch_params, build_ybus, AdmittanceMatrix, BranchParams, TwoPort};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Pq,
    Pv,
    Slack,
}

/// One bus. Powers and shunts are per-unit on the case base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    /// External bus number as written in the source file.
    pub id: u32,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    pub g_shunt: f64,
    pub b_shunt: f64,
    pub v_setpoint: f64,
    pub base_kv: f64,
}

/// One branch. Endpoints are internal (0-based, contiguous) bus indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    pub tap: f64,
    /// Phase shift in radians.
    pub shift: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRecord {
    pub bus: usize,
    pub pg: f64,
    pub qg: f64,
    pub vg: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    pub gens: Vec<GenRecord>,
}

impl NetworkCase {
    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn slack(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    pub fn in_service_branches(&self) -> impl Iterator<Item = (usize, &BranchRecord)> {
        self.branches.iter().enumerate().filter(|(_, br)| br.in_service)
    }

    /// Index of the bus with the given external id.
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Sorted, de-duplicated neighbour lists over in-service branches.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.buses.len()];
        for (_, br) in self.in_service_branches() {
            if br.from_bus != br.to_bus {
                adj[br.from_bus].push(br.to_bus);
                adj[br.to_bus].push(br.from_bus);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Checks the structural invariants every constructor must uphold.
    pub fn validate(&self) -> Result<()> {
        if !(self.base_mva > 0.0) {
            return Err(Error::InvalidCase(format!("base_mva must be positive, got {}", self.base_mva)));
        }
        if self.buses.is_empty() {
            return Err(Error::InvalidCase("case has no buses".into()));
        }
        let slacks = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slacks != 1 {
            return Err(Error::InvalidCase(format!("expected exactly one slack bus, found {slacks}")));
        }
        let mut seen = std::collections::HashSet::new();
        for bus in &self.buses {
            if !seen.insert(bus.id) {
                return Err(Error::DuplicateBus(bus.id));
            }
            if !(bus.v_setpoint > 0.0) {
                return Err(Error::InvalidCase(format!("bus {} has non-positive voltage setpoint", bus.id)));
            }
        }
        let n = self.buses.len();
        for (index, br) in self.branches.iter().enumerate() {
            if br.from_bus >= n || br.to_bus >= n {
                return Err(Error::InvalidCase(format!("branch {index} references a missing bus")));
            }
            if !(br.tap > 0.0) {
                return Err(Error::InvalidCase(format!("branch {index} has non-positive tap {}", br.tap)));
            }
            if br.in_service && br.r == 0.0 && br.x == 0.0 {
                return Err(Error::ZeroImpedance {
                    index,
                    from: self.buses[br.from_bus].id,
                    to: self.buses[br.to_bus].id,
                });
            }
        }
        for (index, gen) in self.gens.iter().enumerate() {
            if gen.bus >= n {
                return Err(Error::InvalidCase(format!("generator {index} references a missing bus")));
            }
        }
        Ok(())
    }

    /// Canonical serialized form. Parsing it back with
    /// [`NetworkCase::from_canonical_json`] yields an identical model.
    pub fn to_canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_canonical_json(text: &str) -> Result<Self> {
        let case: NetworkCase = serde_json::from_str(text)?;
        case.validate()?;
        Ok(case)
    }
}

/// A validated case together with the admittance data derived from it.
///
/// Built once and shared by the measurement, estimation and basis code.
#[derive(Debug, Clone)]
pub struct Network {
    pub case: NetworkCase,
    pub ybus: AdmittanceMatrix,
    /// Two-port model per case branch; `None` for out-of-service branches.
    pub two_ports: Vec<Option<TwoPort>>,
    pub adjacency: Vec<Vec<usize>>,
    slack: usize,
}

impl Network {
    pub fn new(case: NetworkCase) -> Result<Self> {
        case.validate()?;
        let ybus = build_ybus(&case);
        let mut two_ports = vec![None; case.branches.len()];
        for params in branch_params(&case) {
            two_ports[params.branch] = Some(params.two_port());
        }
        let adjacency = case.adjacency();
        let slack = case.slack();
        Ok(Self { case, ybus, two_ports, adjacency, slack })
    }

    pub fn n(&self) -> usize {
        self.case.buses.len()
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    /// Number of free state variables: magnitude and angle at every non-slack bus.
    pub fn free_state_dim(&self) -> usize {
        2 * self.n() - 2
    }

    pub fn name(&self) -> &str {
        &self.case.name
    }
}

/// The IEEE test cases shipped with the crate.
pub mod bundled {
    use super::{parse_matpower_case, NetworkCase};
    use crate::error::{Error, Result};

    pub const NAMES: [&str; 5] = ["case14", "case30", "case39", "case57", "case118"];

    pub fn source(name: &str) -> Option<&'static str> {
        Some(match name {
            "case14" => include_str!("../../cases/case14.m"),
            "case30" => include_str!("../../cases/case30.m"),
            "case39" => include_str!("../../cases/case39.m"),
            "case57" => include_str!("../../cases/case57.m"),
            "case118" => include_str!("../../cases/case118.m"),
            "twobus" => include_str!("../../cases/twobus.m"),
            _ => return None,
        })
    }

    pub fn load(name: &str) -> Result<NetworkCase> {
        let text = source(name).ok_or_else(|| Error::Config(format!("unknown bundled case {name:?}")))?;
        let mut case = parse_matpower_case(text)?;
        case.name = name.to_string();
        Ok(case)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacency_collapses_parallel_branches() {
        let case = bundled::load("case57").unwrap();
        let adj = case.adjacency();
        let total: usize = adj.iter().map(Vec::len).sum();
        // 80 branches but only 78 distinct bus pairs
        assert_eq!(case.branches.len(), 80);
        assert_eq!(total, 2 * 78);
    }

    #[test]
    fn canonical_json_round_trip() {
        for name in bundled::NAMES {
            let case = bundled::load(name).unwrap();
            let text = case.to_canonical_json().unwrap();
            assert_eq!(NetworkCase::from_canonical_json(&text).unwrap(), case);
        }
    }

    #[test]
    fn validate_rejects_two_slacks() {
        let mut case = bundled::load("case14").unwrap();
        case.buses[3].kind = BusKind::Slack;
        assert!(matches!(case.validate(), Err(Error::InvalidCase(_))));
    }
}
