use std::collections::HashSet;
use std::fmt;

use super::{GateKind, GateSource, NetworkTopology, TankKind, Target, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    UnsupportedSchema,
    NonPositiveValue,
    DuplicateId,
    /// `beta * delta_t` must stay below one.
    DiscreteStability,
    /// Weirs exist only on virtual tanks.
    WeirOnRealTank,
    RetentionOnVirtualTank,
    RedirectionOnRealTank,
    MissingDivertedTarget,
    UnknownSource,
    DanglingTarget,
    SharedSource,
    UnroutedOutflow,
    AmbiguousOutflow,
    RainInput,
    CyclicFlow,
    Outputs,
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::UnsupportedSchema => "unsupported-schema",
            Rule::NonPositiveValue => "non-positive-value",
            Rule::DuplicateId => "duplicate-id",
            Rule::DiscreteStability => "discrete-stability",
            Rule::WeirOnRealTank => "weir-on-real-tank",
            Rule::RetentionOnVirtualTank => "retention-on-virtual-tank",
            Rule::RedirectionOnRealTank => "redirection-on-real-tank",
            Rule::MissingDivertedTarget => "missing-diverted-target",
            Rule::UnknownSource => "unknown-source",
            Rule::DanglingTarget => "dangling-target",
            Rule::SharedSource => "shared-source",
            Rule::UnroutedOutflow => "unrouted-outflow",
            Rule::AmbiguousOutflow => "ambiguous-outflow",
            Rule::RainInput => "rain-input",
            Rule::CyclicFlow => "cyclic-flow",
            Rule::Outputs => "outputs",
        }
    }
}

/// One violated rule, naming the offending element.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub element: String,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.element, self.rule.name(), self.message)
    }
}

struct Collector(Vec<Diagnostic>);

impl Collector {
    fn push(&mut self, element: &str, rule: Rule, message: impl Into<String>) {
        self.0.push(Diagnostic {
            element: element.to_string(),
            rule,
            message: message.into(),
        });
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Check every structural invariant; an empty result means the topology is
/// valid.
pub fn validate_topology(topology: &NetworkTopology) -> Vec<Diagnostic> {
    let mut out = Collector(Vec::new());
    let dt = topology.delta_t;

    if topology.schema != SCHEMA_VERSION {
        out.push(
            "schema",
            Rule::UnsupportedSchema,
            format!("expected schema {SCHEMA_VERSION}, found {}", topology.schema),
        );
    }
    if !positive(dt) {
        out.push("delta_t", Rule::NonPositiveValue, format!("delta_t must be > 0, got {dt}"));
    }
    if topology.tanks.is_empty() {
        out.push("tanks", Rule::NonPositiveValue, "network needs at least one tank");
    }

    let mut seen = HashSet::new();
    let ids = topology
        .tanks
        .iter()
        .map(|t| &t.id)
        .chain(topology.gates.iter().map(|g| &g.id))
        .chain(topology.rain_inputs.iter().map(|r| &r.catchment))
        .chain([&topology.outputs.treatment.sink, &topology.outputs.sea.sink]);
    for id in ids {
        if !seen.insert(id.as_str()) {
            out.push(id, Rule::DuplicateId, "identifier used more than once");
        }
    }

    for tank in &topology.tanks {
        if !positive(tank.max_volume) {
            out.push(&tank.id, Rule::NonPositiveValue, "max_volume must be > 0");
        }
        if !positive(tank.beta) {
            out.push(&tank.id, Rule::NonPositiveValue, "beta must be > 0");
        } else if positive(dt) && tank.beta * dt >= 1.0 {
            out.push(
                &tank.id,
                Rule::DiscreteStability,
                format!("beta * delta_t = {} must be < 1", tank.beta * dt),
            );
        }
        if !(tank.catchment_area.is_finite() && tank.catchment_area >= 0.0) {
            out.push(&tank.id, Rule::NonPositiveValue, "catchment_area must be >= 0");
        }
        if tank.has_weir && tank.kind == TankKind::Real {
            out.push(&tank.id, Rule::WeirOnRealTank, "only virtual tanks may carry a weir");
        }
    }

    for (gi, gate) in topology.gates.iter().enumerate() {
        if !positive(gate.max_flow) {
            out.push(&gate.id, Rule::NonPositiveValue, "max_flow must be > 0");
        }
        let source = topology.resolve_source(&gate.source);
        match (gate.kind, source) {
            (_, None) => out.push(
                &gate.id,
                Rule::UnknownSource,
                format!("source '{}' is neither a tank nor a catchment", gate.source),
            ),
            (GateKind::Retention, Some(GateSource::Tank(t))) if topology.tanks[t].kind == TankKind::Virtual => {
                out.push(&gate.id, Rule::RetentionOnVirtualTank, "retention gates attach to real tanks only")
            }
            (GateKind::Retention, Some(GateSource::Rain(_))) => {
                out.push(&gate.id, Rule::RetentionOnVirtualTank, "retention gates attach to real tanks only")
            }
            (GateKind::Redirection, Some(GateSource::Tank(t))) if topology.tanks[t].kind == TankKind::Real => out
                .push(
                    &gate.id,
                    Rule::RedirectionOnRealTank,
                    "a real tank's outflow is its retention gate",
                ),
            _ => {}
        }
        if let Some(src) = source {
            if topology.gates[..gi]
                .iter()
                .any(|other| topology.resolve_source(&other.source) == Some(src))
            {
                out.push(&gate.id, Rule::SharedSource, format!("another gate already takes '{}'", gate.source));
            }
        }
        match (gate.kind, &gate.diverted_target) {
            (GateKind::Redirection, None) => {
                out.push(&gate.id, Rule::MissingDivertedTarget, "redirection gates need a diverted_target")
            }
            (GateKind::Retention, Some(_)) => {
                out.push(&gate.id, Rule::MissingDivertedTarget, "retention gates have no diverted_target")
            }
            _ => {}
        }
        for target in gate.diverted_target.iter().chain(std::iter::once(&gate.main_target)) {
            match topology.resolve_target(target) {
                None => out.push(&gate.id, Rule::DanglingTarget, format!("unknown target '{target}'")),
                Some(Target::Tank(t)) if topology.tanks[t].id == gate.source => {
                    out.push(&gate.id, Rule::CyclicFlow, "gate routes back into its own source")
                }
                _ => {}
            }
        }
    }

    for (i, tank) in topology.tanks.iter().enumerate() {
        let gated = topology.gate_on(GateSource::Tank(i)).is_some();
        match (&tank.outlet, gated) {
            (Some(_), true) => out.push(
                &tank.id,
                Rule::AmbiguousOutflow,
                "outflow taken by a gate; remove the outlet",
            ),
            (None, false) => out.push(
                &tank.id,
                Rule::UnroutedOutflow,
                if tank.kind == TankKind::Real {
                    "real tank needs a retention gate"
                } else {
                    "tank needs an outlet or a gate on its outflow"
                },
            ),
            (Some(outlet), false) => {
                if tank.kind == TankKind::Real {
                    out.push(&tank.id, Rule::UnroutedOutflow, "real tank outflow must pass a retention gate");
                }
                match topology.resolve_target(outlet) {
                    None => out.push(&tank.id, Rule::DanglingTarget, format!("unknown outlet '{outlet}'")),
                    Some(Target::Tank(j)) if j == i => {
                        out.push(&tank.id, Rule::CyclicFlow, "tank drains into itself")
                    }
                    _ => {}
                }
            }
            (None, true) => {}
        }
    }

    let mut fed = HashSet::new();
    for rain in &topology.rain_inputs {
        match topology.tank_index(&rain.tank) {
            None => out.push(&rain.catchment, Rule::DanglingTarget, format!("unknown tank '{}'", rain.tank)),
            Some(t) => {
                if !fed.insert(t) {
                    out.push(&rain.catchment, Rule::RainInput, "tank already has a rain input");
                }
                if topology.tanks[t].catchment_area <= 0.0 {
                    out.push(&rain.catchment, Rule::RainInput, "target tank has no catchment area");
                }
            }
        }
    }

    let treatment = &topology.outputs.treatment;
    if treatment.sink == topology.outputs.sea.sink {
        out.push("outputs", Rule::Outputs, "treatment and sea sinks must differ");
    }
    match treatment.capacity {
        Some(c) if positive(c) => {}
        _ => out.push(&treatment.sink, Rule::Outputs, "treatment plant needs a capacity > 0"),
    }

    // Only meaningful once references resolve.
    if out.0.iter().all(|d| d.rule != Rule::DanglingTarget && d.rule != Rule::UnknownSource)
        && topology.topological_order().is_none()
    {
        out.push("network", Rule::CyclicFlow, "flow graph contains a cycle");
    }

    out.0
}
