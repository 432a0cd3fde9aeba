//! Declarative sewer-network description and its linear control model.
//!
//! A network is a set of tanks (lumped virtual catchment tanks and real
//! retention reservoirs), gates (redirection and retention), rain inputs
//! feeding tanks through catchment areas, and two sinks: the treatment plant
//! and the sea. [`assemble_control_model`] turns a validated topology into
//! the matrices
//!
//! ```text
//! V[k+1] = A V[k] + B u[k] + G r[k]
//! z[k]   = C V[k] + D u[k] + F r[k]
//! M u[k] + P V[k] + S r[k] <= K
//! ```
//!
//! with `V` in m³, `u` in m³/s and `r` the rain intensities in μm/s. Weirs
//! are not part of the control model.

mod assemble;
mod validate;

pub use assemble::{assemble_control_model, Dimensions, NetworkMatrices, RowKind, RowLabel};
pub use validate::{validate_topology, Diagnostic, Rule};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Config schema version understood by this crate.
pub const SCHEMA_VERSION: u32 = 1;

/// Conversion from (μm/s × m²) to m³/s.
pub const UM_PER_S_M2_TO_M3_PER_S: f64 = 1e-6;

/// The ten-tank example network shipped with the crate.
pub const BUNDLED_TEN_TANK: &str = include_str!("../../data/ten_tank.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TankKind {
    Virtual,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TankSpec {
    pub id: String,
    pub kind: TankKind,
    /// Maximum volume (m³).
    pub max_volume: f64,
    /// Volume/flow coefficient (1/s).
    pub beta: f64,
    /// Area (m²) converting rain intensity on this tank's catchment to inflow.
    #[serde(default)]
    pub catchment_area: f64,
    #[serde(default)]
    pub has_weir: bool,
    /// Where the outflow goes when no gate takes it: a tank id or a sink id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlet: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Redirection,
    Retention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSpec {
    pub id: String,
    pub kind: GateKind,
    /// Upper bound on the controlled flow (m³/s).
    pub max_flow: f64,
    /// Tank whose outflow passes the gate, or a catchment id for a gate on a
    /// rain inflow arc.
    pub source: String,
    /// Receives the controlled flow of a redirection gate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverted_target: Option<String>,
    /// Receives the uncontrolled remainder (redirection) or the released
    /// flow (retention).
    pub main_target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RainInput {
    pub catchment: String,
    pub tank: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkSpec {
    pub sink: String,
    /// Intake capacity (m³/s); required for the treatment plant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub treatment: SinkSpec,
    pub sea: SinkSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkTopology {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    /// Sampling time (s).
    pub delta_t: f64,
    pub tanks: Vec<TankSpec>,
    #[serde(default)]
    pub gates: Vec<GateSpec>,
    #[serde(default)]
    pub rain_inputs: Vec<RainInput>,
    pub outputs: Outputs,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("malformed network document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid network: {}", format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

/// Where a flow ends up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Tank(usize),
    Treatment,
    Sea,
}

/// Where a gate takes its inflow from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateSource {
    Tank(usize),
    Rain(usize),
}

impl NetworkTopology {
    pub fn tank_index(&self, id: &str) -> Option<usize> {
        self.tanks.iter().position(|t| t.id == id)
    }

    pub fn gate_index(&self, id: &str) -> Option<usize> {
        self.gates.iter().position(|g| g.id == id)
    }

    pub fn rain_index(&self, catchment: &str) -> Option<usize> {
        self.rain_inputs.iter().position(|r| r.catchment == catchment)
    }

    pub fn resolve_target(&self, id: &str) -> Option<Target> {
        if id == self.outputs.treatment.sink {
            Some(Target::Treatment)
        } else if id == self.outputs.sea.sink {
            Some(Target::Sea)
        } else {
            self.tank_index(id).map(Target::Tank)
        }
    }

    pub fn resolve_source(&self, id: &str) -> Option<GateSource> {
        self.tank_index(id)
            .map(GateSource::Tank)
            .or_else(|| self.rain_index(id).map(GateSource::Rain))
    }

    /// Gate whose inflow is the given source, if any.
    pub fn gate_on(&self, source: GateSource) -> Option<usize> {
        self.gates
            .iter()
            .position(|g| self.resolve_source(&g.source) == Some(source))
    }

    pub fn treatment_capacity(&self) -> f64 {
        self.outputs.treatment.capacity.unwrap_or(0.0)
    }

    pub fn max_volumes(&self) -> Vec<f64> {
        self.tanks.iter().map(|t| t.max_volume).collect()
    }

    /// Tank inflow (m³/s) produced by rain intensity `intensity` (μm/s) on
    /// the catchment of rain input `rain`.
    pub fn rain_flow(&self, rain: usize, intensity: f64) -> f64 {
        let tank = self.tank_index(&self.rain_inputs[rain].tank).expect("validated topology");
        intensity * UM_PER_S_M2_TO_M3_PER_S * self.tanks[tank].catchment_area
    }

    /// Tanks in upstream-to-downstream order. `None` if the flow graph has a
    /// cycle or dangling references.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.tanks.len();
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, tank) in self.tanks.iter().enumerate() {
            for target in self.downstream_of_tank(i) {
                if let Target::Tank(j) = target {
                    succ[i].push(j);
                }
            }
            if let Some(Some(Target::Tank(j))) = tank.outlet.as_deref().map(|o| self.resolve_target(o)) {
                if !succ[i].contains(&j) {
                    succ[i].push(j);
                }
            }
        }
        let mut indeg = vec![0usize; n];
        for s in &succ {
            for &j in s {
                indeg[j] += 1;
            }
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).rev().collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop() {
            order.push(i);
            for &j in &succ[i] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.push(j);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Targets reached directly by the gate (if any) on a tank's outflow.
    fn downstream_of_tank(&self, tank: usize) -> Vec<Target> {
        let mut out = Vec::new();
        if let Some(g) = self.gate_on(GateSource::Tank(tank)) {
            let gate = &self.gates[g];
            for id in gate.diverted_target.iter().chain(std::iter::once(&gate.main_target)) {
                if let Some(t) = self.resolve_target(id) {
                    out.push(t);
                }
            }
        }
        out
    }
}

/// Parse and validate a network config document.
pub fn load_topology(document: &str) -> Result<NetworkTopology, NetworkError> {
    let topology: NetworkTopology = serde_json::from_str(document)?;
    let diagnostics = validate_topology(&topology);
    if diagnostics.is_empty() {
        Ok(topology)
    } else {
        Err(NetworkError::Invalid(diagnostics))
    }
}

pub fn serialize_topology(topology: &NetworkTopology) -> String {
    serde_json::to_string_pretty(topology).expect("topology serializes")
}

/// The bundled ten-tank network.
pub fn bundled_ten_tank() -> NetworkTopology {
    load_topology(BUNDLED_TEN_TANK).expect("bundled config is valid")
}
