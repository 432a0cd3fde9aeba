use std::sync::Arc;

use nalgebra::DVector;

use super::{build_program, check_inputs, CondensedMpc, MpcConfig, MpcError, WarmStart};
use crate::network::NetworkMatrices;
use crate::qp::{self, QpSettings, QpStatus};
use crate::simulator::{ControlDecision, Controller, PlantState, StepStatus};

/// Rain forecast available to a controller at step `k`.
pub trait ForecastSource {
    /// Intensities for steps `k..k + horizon`, one vector per step.
    fn forecast(&self, k: usize, horizon: usize) -> Vec<DVector<f64>>;
}

/// Forecast read from a fixed per-step series, padded with `tail` past its
/// end.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesForecast {
    pub steps: Vec<DVector<f64>>,
    pub tail: DVector<f64>,
}

impl SeriesForecast {
    pub fn new(steps: Vec<DVector<f64>>, tail: DVector<f64>) -> Self {
        Self { steps, tail }
    }
}

impl ForecastSource for SeriesForecast {
    fn forecast(&self, k: usize, horizon: usize) -> Vec<DVector<f64>> {
        (k..k + horizon)
            .map(|t| self.steps.get(t).unwrap_or(&self.tail).clone())
            .collect()
    }
}

/// One receding-horizon step solved on the full horizon program: the first
/// planned control and the solver status (controls are empty unless the
/// status is feasible).
pub fn control_step(
    mats: &NetworkMatrices,
    config: &MpcConfig,
    v0: &DVector<f64>,
    u_prev: &DVector<f64>,
    rain_forecast: &[DVector<f64>],
) -> Result<(DVector<f64>, StepStatus), MpcError> {
    let program = build_program(mats, config, v0, u_prev, rain_forecast)?;
    let solution = qp::solve(&program.problem, &QpSettings::default())?;
    Ok(match solution.status {
        QpStatus::Optimal => (program.controls(&solution.x, 0), StepStatus::Feasible),
        QpStatus::Infeasible => (DVector::zeros(0), StepStatus::Infeasible),
        QpStatus::MaxIterations => (DVector::zeros(0), StepStatus::MaxIterations),
    })
}

/// Last feasible plan, replayed when a later solve fails.
#[derive(Debug, Clone, Default)]
pub(crate) struct PlanMemory {
    plan: Vec<DVector<f64>>,
    from_step: usize,
}

impl PlanMemory {
    pub(crate) fn store(&mut self, k: usize, plan: Vec<DVector<f64>>) {
        self.plan = plan;
        self.from_step = k;
    }

    /// The stored plan shifted to step `k`, or `u_prev` once it runs out.
    pub(crate) fn fallback(&self, k: usize, u_prev: &[f64]) -> Vec<f64> {
        k.checked_sub(self.from_step)
            .and_then(|i| self.plan.get(i))
            .map(|u| u.iter().copied().collect())
            .unwrap_or_else(|| u_prev.to_vec())
    }
}

/// Clamp measured volumes into `[0, V̄]`.
pub(crate) fn measured_volumes(mats: &NetworkMatrices, state: &PlantState) -> DVector<f64> {
    DVector::from_fn(state.volumes.len(), |i, _| state.volumes[i].clamp(0.0, mats.max_volumes[i]))
}

/// Deterministic MPC treating its forecast as exact.
pub struct MpcController<F> {
    mpc: Arc<CondensedMpc>,
    forecast: F,
    warm: WarmStart,
    memory: PlanMemory,
    name: String,
}

impl<F: ForecastSource> MpcController<F> {
    pub fn new(mpc: Arc<CondensedMpc>, forecast: F, name: impl Into<String>) -> Self {
        Self {
            mpc,
            forecast,
            warm: WarmStart::default(),
            memory: PlanMemory::default(),
            name: name.into(),
        }
    }

    /// Start from a known active set instead of a cold solve.
    pub fn with_warm_start(mut self, warm: WarmStart) -> Self {
        self.warm = warm;
        self
    }
}

impl<F: ForecastSource> Controller for MpcController<F> {
    fn decide(&mut self, k: usize, state: &PlantState) -> ControlDecision {
        let mats = self.mpc.matrices();
        let v0 = measured_volumes(mats, state);
        let u_prev = DVector::from_vec(state.previous_controls.clone());
        let rain = self.forecast.forecast(k, self.mpc.horizon());
        if check_inputs(mats, self.mpc.config(), &v0, &u_prev, &rain).is_err() {
            return ControlDecision::hold(&state.previous_controls, StepStatus::Failed);
        }
        let out = self.mpc.solve(&v0, &u_prev, &rain, None, &mut self.warm);
        if out.status.is_feasible() {
            let first = out.plan[0].iter().copied().collect();
            self.memory.store(k, out.plan);
            ControlDecision {
                controls: first,
                status: StepStatus::Feasible,
                gamma_used: None,
                gamma_tried: Vec::new(),
            }
        } else {
            ControlDecision {
                controls: self.memory.fallback(k, &state.previous_controls),
                status: out.status,
                gamma_used: None,
                gamma_tried: Vec::new(),
            }
        }
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}
