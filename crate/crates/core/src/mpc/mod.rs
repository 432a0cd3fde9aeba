//! Deterministic receding-horizon control of the sewer network.
//!
//! The cost over a horizon of `N` steps is
//!
//! ```text
//! Σ_k ‖z_k − z_ref‖²_Q + ‖Δu_k‖²_R,    Δu_0 = u_0 − u_prev
//! ```
//!
//! subject to the control model and every inequality row of the network at
//! each step, with the rain forecast treated as exact.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::NetworkMatrices;
use crate::qp::{QpError, QpProblem};

mod condensed;
mod controller;

pub use condensed::{stack_rain, CondensedMpc, CondensedSolve, HorizonStructure, WarmStart};
pub use controller::{control_step, ForecastSource, MpcController, SeriesForecast};
pub(crate) use controller::{measured_volumes, PlanMemory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("invalid MPC configuration: {0}")]
    Config(String),
    #[error("{what}: expected {expected} entries, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("initial volume of {tank} is {value} m3, outside [0, {max}]")]
    InitialState { tank: String, value: f64, max: f64 },
    #[error("forecast entry at step {step} is not a finite intensity")]
    Forecast { step: usize },
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Diagonal of `Q` for `(treatment, sea)`.
    pub q_weights: [f64; 2],
    /// Uniform diagonal of `R`.
    pub r_weight: f64,
    /// Output reference; `None` means (treatment capacity, 0).
    #[serde(default)]
    pub z_ref: Option<[f64; 2]>,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 24,
            q_weights: [0.5, 1.0],
            r_weight: 0.01,
            z_ref: None,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        if self.horizon == 0 {
            return Err(MpcError::Config("horizon must be >= 1".into()));
        }
        let weights = [self.q_weights[0], self.q_weights[1], self.r_weight];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(MpcError::Config("weights must be finite and >= 0".into()));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(MpcError::Config("at least one weight must be > 0".into()));
        }
        if let Some(z) = self.z_ref {
            if z.iter().any(|v| !v.is_finite()) {
                return Err(MpcError::Config("z_ref must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn reference(&self, mats: &NetworkMatrices) -> [f64; 2] {
        self.z_ref.unwrap_or([mats.treatment_capacity, 0.0])
    }
}

/// Stage cost `‖z − z_ref‖²_Q + ‖Δu‖²_R`.
pub fn stage_cost(config: &MpcConfig, z: &[f64], z_ref: &[f64; 2], du: &[f64]) -> f64 {
    let tracking: f64 = (0..2).map(|i| config.q_weights[i] * (z[i] - z_ref[i]).powi(2)).sum();
    tracking + config.r_weight * du.iter().map(|d| d * d).sum::<f64>()
}

/// Position of each per-step block in the QP variable vector. Step `k`
/// holds `V[k+1]`, `u[k]`, `z[k]`, `Δu[k]` in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    pub horizon: usize,
    pub n_tanks: usize,
    pub n_controls: usize,
    pub n_outputs: usize,
}

impl VariableLayout {
    pub fn new(mats: &NetworkMatrices, horizon: usize) -> Self {
        Self {
            horizon,
            n_tanks: mats.dims.n_tanks,
            n_controls: mats.dims.n_controls,
            n_outputs: mats.n_outputs(),
        }
    }

    pub fn block_len(&self) -> usize {
        self.n_tanks + 2 * self.n_controls + self.n_outputs
    }

    pub fn n_vars(&self) -> usize {
        self.horizon * self.block_len()
    }

    /// Volumes at the end of step `k`.
    pub fn v(&self, k: usize) -> Range<usize> {
        let start = k * self.block_len();
        start..start + self.n_tanks
    }

    pub fn u(&self, k: usize) -> Range<usize> {
        let start = k * self.block_len() + self.n_tanks;
        start..start + self.n_controls
    }

    pub fn z(&self, k: usize) -> Range<usize> {
        let start = k * self.block_len() + self.n_tanks + self.n_controls;
        start..start + self.n_outputs
    }

    pub fn du(&self, k: usize) -> Range<usize> {
        let start = k * self.block_len() + self.n_tanks + self.n_controls + self.n_outputs;
        start..start + self.n_controls
    }

    pub fn names(&self, mats: &NetworkMatrices) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_vars());
        for k in 0..self.horizon {
            names.extend(mats.tank_ids.iter().map(|t| format!("V[{t},{}]", k + 1)));
            names.extend(mats.gate_ids.iter().map(|g| format!("u[{g},{k}]")));
            names.extend(["treatment", "sea"].iter().map(|o| format!("z[{o},{k}]")));
            names.extend(mats.gate_ids.iter().map(|g| format!("du[{g},{k}]")));
        }
        names
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Deterministic,
    ChanceConstrained { gamma: f64 },
}

/// Inequality row `row` of the network applied at horizon step `step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HorizonRow {
    pub step: usize,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonProgram {
    pub problem: QpProblem,
    pub layout: VariableLayout,
    pub provenance: Provenance,
    /// One entry per inequality of `problem`.
    pub rows: Vec<HorizonRow>,
    /// `N · z_refᵀ Q z_ref`, dropped from the QP objective.
    pub objective_constant: f64,
    /// Expected-cost contribution of output variance (zero when
    /// deterministic), dropped from the QP objective.
    pub trace_term: f64,
}

impl HorizonProgram {
    /// Horizon cost of a QP point, constants included.
    pub fn cost(&self, x: &DVector<f64>) -> f64 {
        self.problem.objective(x) + self.objective_constant
    }

    pub fn controls(&self, x: &DVector<f64>, k: usize) -> DVector<f64> {
        x.rows_range(self.layout.u(k)).into_owned()
    }
}

/// Enumerate horizon rows in program order: steps outer, network rows inner.
pub fn horizon_rows(mats: &NetworkMatrices, horizon: usize) -> Vec<HorizonRow> {
    (0..horizon)
        .flat_map(|step| (0..mats.dims.n_rows).map(move |row| HorizonRow { step, row }))
        .collect()
}

pub(crate) fn check_inputs(
    mats: &NetworkMatrices,
    config: &MpcConfig,
    v0: &DVector<f64>,
    u_prev: &DVector<f64>,
    rain: &[DVector<f64>],
) -> Result<(), MpcError> {
    config.validate()?;
    let dims = &mats.dims;
    let check = |what, expected, got| {
        if expected == got {
            Ok(())
        } else {
            Err(MpcError::Dimension { what, expected, got })
        }
    };
    check("v0", dims.n_tanks, v0.len())?;
    check("u_prev", dims.n_controls, u_prev.len())?;
    check("forecast steps", config.horizon, rain.len())?;
    for (step, r) in rain.iter().enumerate() {
        check("forecast inputs", dims.n_rain, r.len())?;
        if r.iter().any(|v| !v.is_finite()) {
            return Err(MpcError::Forecast { step });
        }
    }
    for i in 0..dims.n_tanks {
        let max = mats.max_volumes[i];
        let slack = 1e-9 * max.max(1.0);
        if !(v0[i] >= -slack && v0[i] <= max + slack) {
            return Err(MpcError::InitialState {
                tank: mats.tank_ids[i].clone(),
                value: v0[i],
                max,
            });
        }
    }
    if u_prev.iter().any(|u| !u.is_finite()) {
        return Err(MpcError::Config("u_prev must be finite".into()));
    }
    Ok(())
}

/// Assemble the full horizon program around the rain means `rain` with
/// per-row right-hand-side reductions `offsets` (one per horizon row).
pub(crate) fn assemble_program(
    mats: &NetworkMatrices,
    config: &MpcConfig,
    v0: &DVector<f64>,
    u_prev: &DVector<f64>,
    rain: &[DVector<f64>],
    offsets: Option<&[f64]>,
    provenance: Provenance,
    trace_term: f64,
) -> HorizonProgram {
    let layout = VariableLayout::new(mats, config.horizon);
    let (n, m, no) = (layout.n_tanks, layout.n_controls, layout.n_outputs);
    let nv = layout.n_vars();
    let horizon = config.horizon;
    let z_ref = config.reference(mats);

    let mut h = DMatrix::zeros(nv, nv);
    let mut g = DVector::zeros(nv);
    for k in 0..horizon {
        let zr = layout.z(k);
        for o in 0..no {
            h[(zr.start + o, zr.start + o)] = 2.0 * config.q_weights[o];
            g[zr.start + o] = -2.0 * config.q_weights[o] * z_ref[o];
        }
        for i in layout.du(k) {
            h[(i, i)] = 2.0 * config.r_weight;
        }
    }
    let objective_constant =
        horizon as f64 * (0..no).map(|o| config.q_weights[o] * z_ref[o] * z_ref[o]).sum::<f64>();

    let n_eq = horizon * (n + no + m);
    let mut a_eq = DMatrix::zeros(n_eq, nv);
    let mut b_eq = DVector::zeros(n_eq);
    for k in 0..horizon {
        let base = k * (n + no + m);
        let (vr, ur, zr, dr) = (layout.v(k), layout.u(k), layout.z(k), layout.du(k));
        let gr = &mats.g * &rain[k];
        let fr = &mats.f * &rain[k];
        // V[k+1] − A V[k] − B u[k] = G r[k]
        for i in 0..n {
            a_eq[(base + i, vr.start + i)] = 1.0;
            for j in 0..m {
                a_eq[(base + i, ur.start + j)] = -mats.b[(i, j)];
            }
            b_eq[base + i] = gr[i];
        }
        // z[k] − C V[k] − D u[k] = F r[k]
        for o in 0..no {
            let row = base + n + o;
            a_eq[(row, zr.start + o)] = 1.0;
            for j in 0..m {
                a_eq[(row, ur.start + j)] = -mats.d[(o, j)];
            }
            b_eq[row] = fr[o];
        }
        if k == 0 {
            let av = &mats.a * v0;
            let cv = &mats.c * v0;
            for i in 0..n {
                b_eq[base + i] += av[i];
            }
            for o in 0..no {
                b_eq[base + n + o] += cv[o];
            }
        } else {
            let prev = layout.v(k - 1);
            for i in 0..n {
                for t in 0..n {
                    a_eq[(base + i, prev.start + t)] = -mats.a[(i, t)];
                }
            }
            for o in 0..no {
                for t in 0..n {
                    a_eq[(base + n + o, prev.start + t)] = -mats.c[(o, t)];
                }
            }
        }
        // Δu[k] − u[k] + u[k−1] = 0
        for j in 0..m {
            let row = base + n + no + j;
            a_eq[(row, dr.start + j)] = 1.0;
            a_eq[(row, ur.start + j)] = -1.0;
            if k == 0 {
                b_eq[row] = -u_prev[j];
            } else {
                a_eq[(row, layout.u(k - 1).start + j)] = 1.0;
            }
        }
    }

    let rows = horizon_rows(mats, horizon);
    let mut a_in = DMatrix::zeros(rows.len(), nv);
    let mut b_in = DVector::zeros(rows.len());
    for (r, hr) in rows.iter().enumerate() {
        let j = hr.row;
        let k = hr.step;
        let mut rhs = mats.k[j];
        if mats.rows[j].kind.is_state_row() {
            let vr = layout.v(k);
            for t in 0..n {
                a_in[(r, vr.start + t)] = mats.p[(j, t)];
            }
        } else {
            let ur = layout.u(k);
            for c in 0..m {
                a_in[(r, ur.start + c)] = mats.m[(j, c)];
            }
            rhs -= dot_row(&mats.s, j, &rain[k]);
            if k == 0 {
                rhs -= dot_row(&mats.p, j, v0);
            } else {
                let vr = layout.v(k - 1);
                for t in 0..n {
                    a_in[(r, vr.start + t)] = mats.p[(j, t)];
                }
            }
        }
        if let Some(off) = offsets {
            rhs -= off[r];
        }
        b_in[r] = rhs;
    }

    let mut problem = QpProblem::new(h, g)
        .with_equalities(a_eq, b_eq)
        .with_inequalities(a_in, b_in);
    problem.var_names = layout.names(mats);
    HorizonProgram {
        problem,
        layout,
        provenance,
        rows,
        objective_constant,
        trace_term,
    }
}

/// `M[row, :] · x` accumulated left to right.
pub(crate) fn dot_row(m: &DMatrix<f64>, row: usize, x: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for (c, xc) in x.iter().enumerate() {
        acc += m[(row, c)] * xc;
    }
    acc
}

/// Full horizon program with the forecast treated as certain.
pub fn build_program(
    mats: &NetworkMatrices,
    config: &MpcConfig,
    v0: &DVector<f64>,
    u_prev: &DVector<f64>,
    rain_forecast: &[DVector<f64>],
) -> Result<HorizonProgram, MpcError> {
    check_inputs(mats, config, v0, u_prev, rain_forecast)?;
    Ok(assemble_program(
        mats,
        config,
        v0,
        u_prev,
        rain_forecast,
        None,
        Provenance::Deterministic,
        0.0,
    ))
}

#[cfg(test)]
mod tests;
