//! Ground-truth plant: steps the network with weir overflow and physical
//! clamping, independent of any controller model, and drives receding-horizon
//! controllers in closed loop.

use std::fmt;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};

use thiserror::Error;

use crate::network::{GateKind, GateSource, NetworkTopology, TankKind, Target, UM_PER_S_M2_TO_M3_PER_S};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{what}: expected {expected} entries, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("rain intensity for input {index} must be finite and >= 0, got {value}")]
    InvalidRain { index: usize, value: f64 },
    #[error("control {index} is not finite")]
    InvalidControl { index: usize },
    #[error("invalid topology: {0}")]
    Topology(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    /// Tank volumes (m³).
    pub volumes: Vec<f64>,
    /// Controls applied during the previous step (m³/s).
    pub previous_controls: Vec<f64>,
}

impl PlantState {
    pub fn new(volumes: Vec<f64>, previous_controls: Vec<f64>) -> Self {
        Self {
            volumes,
            previous_controls,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStepResult {
    pub new_state: PlantState,
    /// Weir overflow per tank (m³/s).
    pub weir_flows: Vec<f64>,
    /// `[treatment, sea]` (m³/s).
    pub outputs: [f64; 2],
    pub applied_controls: Vec<f64>,
    pub tank_inflows: Vec<f64>,
    pub tank_outflows: Vec<f64>,
    /// Real tanks pushed above their maximum volume by ungated inflow.
    pub violations: Vec<String>,
}

impl SimStepResult {
    /// Largest per-tank relative residual of
    /// `V[k+1] - V[k] = dt * (q_in - q_out - q_w)`.
    pub fn mass_balance_residual(&self, previous: &[f64], delta_t: f64) -> f64 {
        previous
            .iter()
            .enumerate()
            .map(|(i, &v0)| {
                let v1 = self.new_state.volumes[i];
                let rhs = delta_t * (self.tank_inflows[i] - self.tank_outflows[i] - self.weir_flows[i]);
                let scale = v0.abs().max(v1.abs()).max(delta_t * self.tank_inflows[i].abs()).max(1.0);
                ((v1 - v0) - rhs).abs() / scale
            })
            .fold(0.0, f64::max)
    }
}

/// Precomputed routing for fast repeated steps.
#[derive(Debug, Clone)]
pub struct Plant {
    topology: NetworkTopology,
    order: Vec<usize>,
    tank_gate: Vec<Option<usize>>,
    rain_gate: Vec<Option<usize>>,
    rain_tank: Vec<usize>,
    gate_targets: Vec<(Option<Target>, Target)>,
    outlet: Vec<Option<Target>>,
}

impl Plant {
    pub fn new(topology: &NetworkTopology) -> Result<Self, SimError> {
        let diags = crate::network::validate_topology(topology);
        if !diags.is_empty() {
            return Err(SimError::Topology(
                diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "),
            ));
        }
        let order = topology.topological_order().expect("validated");
        let tank_gate = (0..topology.tanks.len())
            .map(|i| topology.gate_on(GateSource::Tank(i)))
            .collect();
        let rain_gate = (0..topology.rain_inputs.len())
            .map(|c| topology.gate_on(GateSource::Rain(c)))
            .collect();
        let rain_tank = topology
            .rain_inputs
            .iter()
            .map(|r| topology.tank_index(&r.tank).expect("validated"))
            .collect();
        let gate_targets = topology
            .gates
            .iter()
            .map(|g| {
                (
                    g.diverted_target.as_deref().and_then(|t| topology.resolve_target(t)),
                    topology.resolve_target(&g.main_target).expect("validated"),
                )
            })
            .collect();
        let outlet = topology
            .tanks
            .iter()
            .map(|t| t.outlet.as_deref().and_then(|o| topology.resolve_target(o)))
            .collect();
        Ok(Self {
            topology: topology.clone(),
            order,
            tank_gate,
            rain_gate,
            rain_tank,
            gate_targets,
            outlet,
        })
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn n_tanks(&self) -> usize {
        self.topology.tanks.len()
    }

    pub fn n_controls(&self) -> usize {
        self.topology.gates.len()
    }

    pub fn n_rain(&self) -> usize {
        self.topology.rain_inputs.len()
    }

    /// Advance one sampling period.
    ///
    /// Requested controls are clamped into their physical boxes using the
    /// actual inflows of this step. Weir tanks drain `beta (V - dt q_w)` and
    /// shed through the weir exactly what would otherwise leave them above
    /// `V_max` at the end of the step, so they finish at or below it. A real tank that would exceed its maximum first
    /// has the gates diverting into it throttled; any remaining excess is
    /// reported in `violations`.
    pub fn step(&self, state: &PlantState, controls: &[f64], rain: &[f64]) -> Result<SimStepResult, SimError> {
        let n = self.n_tanks();
        let m = self.n_controls();
        let l = self.n_rain();
        check_len("volumes", n, state.volumes.len())?;
        check_len("controls", m, controls.len())?;
        check_len("rain", l, rain.len())?;
        for (index, &value) in rain.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(SimError::InvalidRain { index, value });
            }
        }
        if let Some(index) = controls.iter().position(|u| !u.is_finite()) {
            return Err(SimError::InvalidControl { index });
        }

        let mut caps = vec![f64::INFINITY; m];
        let max_passes = 2 + self.topology.tanks.iter().filter(|t| t.kind == TankKind::Real).count() * m;
        let mut pass = 0;
        loop {
            let flows = self.route(state, controls, rain, &caps);
            pass += 1;
            let mut throttled = false;
            let mut violations = Vec::new();
            for i in 0..n {
                let tank = &self.topology.tanks[i];
                if tank.kind != TankKind::Real || flows.volumes[i] <= tank.max_volume {
                    continue;
                }
                let mut excess = (flows.volumes[i] - tank.max_volume) / self.topology.delta_t;
                for (g, (diverted, _)) in self.gate_targets.iter().enumerate() {
                    if excess <= 0.0 || *diverted != Some(Target::Tank(i)) || flows.applied[g] <= 0.0 {
                        continue;
                    }
                    let cut = excess.min(flows.applied[g]);
                    caps[g] = flows.applied[g] - cut;
                    excess -= cut;
                    throttled = true;
                }
                if excess > 0.0 {
                    violations.push(format!(
                        "{} exceeds max volume by {:.6e} m3",
                        tank.id,
                        excess * self.topology.delta_t
                    ));
                }
            }
            if !throttled || pass >= max_passes {
                return Ok(SimStepResult {
                    new_state: PlantState {
                        volumes: flows.volumes,
                        previous_controls: flows.applied.clone(),
                    },
                    weir_flows: flows.weir,
                    outputs: [flows.treatment, flows.sea],
                    applied_controls: flows.applied,
                    tank_inflows: flows.inflow,
                    tank_outflows: flows.outflow,
                    violations,
                });
            }
        }
    }

    fn route(&self, state: &PlantState, controls: &[f64], rain: &[f64], caps: &[f64]) -> Flows {
        let topo = &self.topology;
        let dt = topo.delta_t;
        let n = self.n_tanks();
        let m = self.n_controls();
        let mut fl = Flows {
            inflow: vec![0.0; n],
            outflow: vec![0.0; n],
            weir: vec![0.0; n],
            volumes: state.volumes.clone(),
            applied: vec![0.0; m],
            treatment: 0.0,
            sea: 0.0,
        };

        for (c, &intensity) in rain.iter().enumerate() {
            let tank = self.rain_tank[c];
            let q = intensity * UM_PER_S_M2_TO_M3_PER_S * topo.tanks[tank].catchment_area;
            match self.rain_gate[c] {
                Some(g) => self.pass_gate(g, q, controls[g], caps[g], &mut fl),
                None => fl.inflow[tank] += q,
            }
        }

        for &i in &self.order {
            let tank = &topo.tanks[i];
            let v = state.volumes[i];
            let q_in = fl.inflow[i];
            match tank.kind {
                TankKind::Virtual => {
                    let keep = 1.0 - dt * tank.beta;
                    let mut q_w = 0.0;
                    if tank.has_weir {
                        let excess = v * keep + dt * q_in - tank.max_volume;
                        if excess > 0.0 {
                            q_w = excess / (dt * keep);
                        }
                        if v - dt * q_w < 0.0 {
                            q_w = (v + dt * q_in - tank.max_volume) / dt;
                        }
                    }
                    let q_out = tank.beta * (v - dt * q_w).max(0.0);
                    fl.weir[i] = q_w;
                    fl.outflow[i] = q_out;
                    fl.volumes[i] = v + dt * (q_in - q_out - q_w);
                    match self.tank_gate[i] {
                        Some(g) => self.pass_gate(g, q_out, controls[g], caps[g], &mut fl),
                        None => fl.deliver(self.outlet[i].expect("validated"), q_out),
                    }
                }
                TankKind::Real => {
                    let g = self.tank_gate[i].expect("validated: real tank has a retention gate");
                    let gate = &topo.gates[g];
                    let limit = gate.max_flow.min(tank.beta * v.max(0.0)).min(caps[g]);
                    let q_out = controls[g].clamp(0.0, limit.max(0.0));
                    fl.applied[g] = q_out;
                    fl.outflow[i] = q_out;
                    fl.volumes[i] = v + dt * (q_in - q_out);
                    fl.deliver(self.gate_targets[g].1, q_out);
                }
            }
        }
        fl
    }

    fn pass_gate(&self, g: usize, q_in: f64, requested: f64, cap: f64, fl: &mut Flows) {
        let gate = &self.topology.gates[g];
        debug_assert_eq!(gate.kind, GateKind::Redirection);
        let limit = gate.max_flow.min(q_in).min(cap).max(0.0);
        let applied = requested.clamp(0.0, limit);
        fl.applied[g] = applied;
        let (diverted, main) = self.gate_targets[g];
        fl.deliver(diverted.expect("validated"), applied);
        fl.deliver(main, q_in - applied);
    }
}

struct Flows {
    inflow: Vec<f64>,
    outflow: Vec<f64>,
    weir: Vec<f64>,
    volumes: Vec<f64>,
    applied: Vec<f64>,
    treatment: f64,
    sea: f64,
}

impl Flows {
    fn deliver(&mut self, target: Target, q: f64) {
        match target {
            Target::Tank(t) => self.inflow[t] += q,
            Target::Treatment => self.treatment += q,
            Target::Sea => self.sea += q,
        }
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), SimError> {
    if expected == got {
        Ok(())
    } else {
        Err(SimError::Dimension { what, expected, got })
    }
}

/// One plant step on a topology (builds the routing on every call; use
/// [`Plant`] in loops).
pub fn plant_step(
    topology: &NetworkTopology,
    state: &PlantState,
    controls: &[f64],
    rain: &[f64],
) -> Result<SimStepResult, SimError> {
    Plant::new(topology)?.step(state, controls, rain)
}

/// Per-step controller outcome recorded in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StepStatus {
    Feasible,
    Infeasible,
    MaxIterations,
    Failed,
}

impl StepStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepStatus::Feasible => "feasible",
            StepStatus::Infeasible => "infeasible",
            StepStatus::MaxIterations => "max_iterations",
            StepStatus::Failed => "failed",
        }
    }

    pub fn is_feasible(&self) -> bool {
        *self == StepStatus::Feasible
    }
}

impl fmt::Display for StepStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub controls: Vec<f64>,
    pub status: StepStatus,
    pub gamma_used: Option<f64>,
    /// Probability levels attempted before `gamma_used` (or all of them when
    /// none worked).
    pub gamma_tried: Vec<f64>,
}

impl ControlDecision {
    pub fn hold(previous: &[f64], status: StepStatus) -> Self {
        Self {
            controls: previous.to_vec(),
            status,
            gamma_used: None,
            gamma_tried: Vec::new(),
        }
    }
}

/// A receding-horizon controller: given the measured state at step `k`,
/// return the control to apply now.
pub trait Controller {
    fn decide(&mut self, k: usize, state: &PlantState) -> ControlDecision;

    fn name(&self) -> String;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub k: usize,
    /// Volumes at the start of the step.
    pub volumes: Vec<f64>,
    pub applied_controls: Vec<f64>,
    pub weir_flows: Vec<f64>,
    pub outputs: [f64; 2],
    pub status: StepStatus,
    pub gamma_used: Option<f64>,
    pub gamma_tried: Vec<f64>,
    pub mass_residual: f64,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub controller: String,
    pub delta_t: f64,
    pub tank_ids: Vec<String>,
    pub gate_ids: Vec<String>,
    pub steps: Vec<TraceStep>,
    pub final_volumes: Vec<f64>,
}

impl SimulationTrace {
    pub fn total_overflow(&self) -> f64 {
        total_overflow(self)
    }

    /// First step whose controller status was not feasible.
    pub fn first_infeasible_step(&self) -> Option<usize> {
        self.steps.iter().find(|s| !s.status.is_feasible()).map(|s| s.k)
    }

    pub fn all_feasible(&self) -> bool {
        self.first_infeasible_step().is_none()
    }

    /// Volumes after each step (start-of-step volumes shifted by one, plus
    /// the final state).
    pub fn post_step_volumes(&self) -> impl Iterator<Item = &[f64]> {
        self.steps
            .iter()
            .skip(1)
            .map(|s| s.volumes.as_slice())
            .chain(std::iter::once(self.final_volumes.as_slice()))
    }

    /// CSV with columns `k, t_s, V_<tank>..., qu_<gate>..., qw_<tank>...,
    /// z_treatment, z_sea, status, gamma_used, gamma_tried`. `header_comment`
    /// lines are written first, prefixed with `#`.
    pub fn write_csv<W: Write>(&self, out: W, header_comment: &[String]) -> csv::Result<()> {
        let mut raw = out;
        for line in header_comment {
            writeln!(raw, "# {line}")?;
        }
        let mut w = csv::Writer::from_writer(raw);
        let mut header = vec!["k".to_string(), "t_s".to_string()];
        header.extend(self.tank_ids.iter().map(|t| format!("V_{t}")));
        header.extend(self.gate_ids.iter().map(|g| format!("qu_{g}")));
        header.extend(self.tank_ids.iter().map(|t| format!("qw_{t}")));
        header.extend(["z_treatment", "z_sea", "status", "gamma_used", "gamma_tried"].map(String::from));
        w.write_record(&header)?;
        for s in &self.steps {
            let mut rec = vec![s.k.to_string(), fmt_num(s.k as f64 * self.delta_t)];
            rec.extend(s.volumes.iter().map(|&x| fmt_num(x)));
            rec.extend(s.applied_controls.iter().map(|&x| fmt_num(x)));
            rec.extend(s.weir_flows.iter().map(|&x| fmt_num(x)));
            rec.push(fmt_num(s.outputs[0]));
            rec.push(fmt_num(s.outputs[1]));
            rec.push(s.status.to_string());
            rec.push(s.gamma_used.map(fmt_num).unwrap_or_default());
            rec.push(s.gamma_tried.iter().map(|&g| fmt_num(g)).collect::<Vec<_>>().join(";"));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-trip decimal representation.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x}")
    }
}

/// Total weir overflow volume (m³): `dt * sum_k sum_i q_w[k][i]`.
pub fn total_overflow(trace: &SimulationTrace) -> f64 {
    trace.delta_t * trace.steps.iter().map(|s| s.weir_flows.iter().sum::<f64>()).sum::<f64>()
}

/// Run a controller against the plant for `actual_rain.len()` steps.
///
/// `actual_rain[k]` holds one intensity (μm/s) per rain input. Controller
/// panics are recorded as [`StepStatus::Failed`] and the previous controls
/// are held.
pub fn run_closed_loop(
    plant: &Plant,
    controller: &mut dyn Controller,
    actual_rain: &[Vec<f64>],
    initial: PlantState,
) -> Result<SimulationTrace, SimError> {
    let dt = plant.topology().delta_t;
    let mut state = initial;
    let mut steps = Vec::with_capacity(actual_rain.len());
    for (k, rain) in actual_rain.iter().enumerate() {
        let decision = catch_unwind(AssertUnwindSafe(|| controller.decide(k, &state)))
            .unwrap_or_else(|_| ControlDecision::hold(&state.previous_controls, StepStatus::Failed));
        let controls = if decision.controls.len() == plant.n_controls()
            && decision.controls.iter().all(|u| u.is_finite())
        {
            decision.controls.clone()
        } else {
            state.previous_controls.clone()
        };
        let result = plant.step(&state, &controls, rain)?;
        let residual = result.mass_balance_residual(&state.volumes, dt);
        steps.push(TraceStep {
            k,
            volumes: state.volumes.clone(),
            applied_controls: result.applied_controls.clone(),
            weir_flows: result.weir_flows.clone(),
            outputs: result.outputs,
            status: decision.status,
            gamma_used: decision.gamma_used,
            gamma_tried: decision.gamma_tried,
            mass_residual: residual,
            violations: result.violations.clone(),
        });
        state = result.new_state;
    }
    Ok(SimulationTrace {
        controller: controller.name(),
        delta_t: dt,
        tank_ids: plant.topology().tanks.iter().map(|t| t.id.clone()).collect(),
        gate_ids: plant.topology().gates.iter().map(|g| g.id.clone()).collect(),
        steps,
        final_volumes: state.volumes,
    })
}

/// Volumes of the network at rest under constant rain with all gates closed
/// (real tanks empty).
pub fn steady_state(topology: &NetworkTopology, rain: &[f64]) -> Vec<f64> {
    let plant = Plant::new(topology).expect("valid topology");
    let n = plant.n_tanks();
    let zero_u = vec![0.0; plant.n_controls()];
    // Upstream-first fixed point: each virtual tank settles at inflow / beta.
    let mut volumes = vec![0.0; n];
    for _ in 0..n + 1 {
        let state = PlantState::new(volumes.clone(), zero_u.clone());
        let flows = plant.route(&state, &zero_u, rain, &vec![f64::INFINITY; zero_u.len()]);
        for i in 0..n {
            let tank = &topology.tanks[i];
            volumes[i] = match tank.kind {
                TankKind::Virtual => (flows.inflow[i] / tank.beta).min(tank.max_volume),
                TankKind::Real => 0.0,
            };
        }
    }
    volumes
}
