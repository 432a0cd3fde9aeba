//! Chance-constrained MPC.
//!
//! Rain forecasts are truncated Gaussians, independent across steps and
//! inputs. Volumes split into a control-affine mean and a zero-mean
//! deviation driven only by the initial covariance and the rain; every
//! inequality row `M u + P V + S r ≤ K` is then required to hold with
//! probability `γ`:
//!
//! ```text
//! control part ≤ K − E[stochastic part] − offset(γ)
//! ```
//!
//! A row whose stochastic part is one forecast entry `c·w` uses the exact
//! truncated quantile, `offset = c·(Q_w(γ) − E[w])` (with `1 − γ` when
//! `c < 0`). Rows aggregating several uncertain terms use the Gaussian
//! approximation `offset = σ_row·Φ⁻¹(γ)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::distributions::{std_normal_quantile, DistributionError, GaussianSpec, TruncatedGaussianSpec};
use crate::mpc::{
    assemble_program, check_inputs, measured_volumes, CondensedMpc, HorizonProgram, HorizonRow, HorizonStructure, MpcConfig,
    MpcError, PlanMemory, Provenance, WarmStart,
};
use crate::network::NetworkMatrices;
use crate::qp::{self, QpSettings, QpStatus};
use crate::simulator::{ControlDecision, Controller, PlantState, StepStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CcError {
    #[error("probability level {0} outside (0, 1)")]
    Gamma(f64),
    #[error("invalid gamma schedule: {0}")]
    Schedule(String),
    #[error("invalid uncertainty model: {0}")]
    Uncertainty(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
}

/// Forecast distribution over a horizon: one spec per step and rain input,
/// plus the covariance of the initial volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyModel {
    steps: Vec<Vec<TruncatedGaussianSpec>>,
    /// Truncated (mean, variance) of each entry of `steps`.
    moments: Vec<Vec<(f64, f64)>>,
    initial_covariance: Option<DMatrix<f64>>,
}

impl UncertaintyModel {
    pub fn new(steps: Vec<Vec<TruncatedGaussianSpec>>) -> Result<Self, CcError> {
        let width = steps.first().map_or(0, Vec::len);
        if steps.iter().any(|s| s.len() != width) {
            return Err(CcError::Uncertainty("steps disagree on the number of rain inputs".into()));
        }
        let moments = steps.iter().map(|s| s.iter().map(|spec| spec.moments()).collect()).collect();
        Ok(Self {
            steps,
            moments,
            initial_covariance: None,
        })
    }

    /// Zero-variance model concentrated on `means`.
    pub fn point(means: &[DVector<f64>]) -> Result<Self, CcError> {
        let steps = means
            .iter()
            .map(|m| {
                m.iter()
                    .map(|&v| Ok(TruncatedGaussianSpec::untruncated(GaussianSpec::new(v, 0.0)?)))
                    .collect::<Result<Vec<_>, DistributionError>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(steps)
    }

    pub fn with_initial_covariance(mut self, cov: DMatrix<f64>) -> Result<Self, CcError> {
        if cov.nrows() != cov.ncols() || cov.iter().any(|v| !v.is_finite()) {
            return Err(CcError::Uncertainty("initial covariance must be square and finite".into()));
        }
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return Err(CcError::Uncertainty("initial covariance is not symmetric".into()));
        }
        if qp::check_psd(&cov, 1e-12).is_err() {
            return Err(CcError::Uncertainty("initial covariance is not positive semidefinite".into()));
        }
        self.initial_covariance = Some(cov);
        Ok(self)
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.steps.first().map_or(0, Vec::len)
    }

    pub fn spec(&self, step: usize, input: usize) -> &TruncatedGaussianSpec {
        &self.steps[step][input]
    }

    pub fn steps(&self) -> &[Vec<TruncatedGaussianSpec>] {
        &self.steps
    }

    pub fn initial_covariance(&self) -> Option<&DMatrix<f64>> {
        self.initial_covariance.as_ref()
    }

    /// Truncated means per step.
    pub fn means(&self) -> Vec<DVector<f64>> {
        self.moments
            .iter()
            .map(|s| DVector::from_iterator(s.len(), s.iter().map(|m| m.0)))
            .collect()
    }

    /// Truncated variances per step.
    pub fn variances(&self) -> Vec<DVector<f64>> {
        self.moments
            .iter()
            .map(|s| DVector::from_iterator(s.len(), s.iter().map(|m| m.1)))
            .collect()
    }
}

/// Means and covariances over a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectory {
    /// `E[V_k]`, `k = 0..=N`, under the supplied control plan (zero when
    /// none).
    pub mean_volumes: Vec<DVector<f64>>,
    /// `Σ_k`, `k = 0..=N`; independent of the controls.
    pub volume_covariances: Vec<DMatrix<f64>>,
    /// `Σ_{z,k} = C Σ_k Cᵀ + F Σ_{r,k} Fᵀ`, `k = 0..N−1`.
    pub output_covariances: Vec<DMatrix<f64>>,
    pub rows: Vec<HorizonRow>,
    /// Mean of each row's stochastic part (initial volumes and rain).
    pub row_means: DVector<f64>,
    /// Variance of each row's stochastic part.
    pub row_variances: DVector<f64>,
}

impl MomentTrajectory {
    /// `Σ_k tr(Q Σ_{z,k})`: the expected-cost term the QP drops.
    pub fn trace_term(&self, config: &MpcConfig) -> f64 {
        self.output_covariances
            .iter()
            .map(|s| (0..2).map(|o| config.q_weights[o] * s[(o, o)]).sum::<f64>())
            .sum()
    }
}

fn check_horizon(mats: &NetworkMatrices, uncertainty: &UncertaintyModel) -> Result<(), CcError> {
    if uncertainty.n_inputs() != mats.dims.n_rain {
        return Err(CcError::Mpc(MpcError::Dimension {
            what: "uncertainty inputs",
            expected: mats.dims.n_rain,
            got: uncertainty.n_inputs(),
        }));
    }
    if let Some(cov) = uncertainty.initial_covariance() {
        if cov.nrows() != mats.dims.n_tanks {
            return Err(CcError::Mpc(MpcError::Dimension {
                what: "initial covariance",
                expected: mats.dims.n_tanks,
                got: cov.nrows(),
            }));
        }
    }
    Ok(())
}

/// Propagate means and covariances of the volumes over the horizon of
/// `uncertainty`.
pub fn propagate_moments(
    mats: &NetworkMatrices,
    v0: &DVector<f64>,
    uncertainty: &UncertaintyModel,
    plan: Option<&[DVector<f64>]>,
) -> Result<MomentTrajectory, CcError> {
    check_horizon(mats, uncertainty)?;
    let horizon = uncertainty.horizon();
    let n = mats.dims.n_tanks;
    if v0.len() != n {
        return Err(CcError::Mpc(MpcError::Dimension {
            what: "v0",
            expected: n,
            got: v0.len(),
        }));
    }
    if let Some(p) = plan {
        if p.len() != horizon || p.iter().any(|u| u.len() != mats.dims.n_controls) {
            return Err(CcError::Mpc(MpcError::Dimension {
                what: "control plan",
                expected: horizon,
                got: p.len(),
            }));
        }
    }
    let means = uncertainty.means();
    let variances = uncertainty.variances();

    let mut mean_volumes = vec![v0.clone()];
    let mut free = vec![v0.clone()];
    let mut covs = vec![uncertainty
        .initial_covariance()
        .cloned()
        .unwrap_or_else(|| DMatrix::zeros(n, n))];
    let mut output_covariances = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let gr = &mats.g * &means[k];
        let mut next = &mats.a * &mean_volumes[k] + &gr;
        if let Some(p) = plan {
            next += &mats.b * &p[k];
        }
        mean_volumes.push(next);
        free.push(&mats.a * &free[k] + gr);

        let g_scaled = scale_columns(&mats.g, &variances[k]);
        let f_scaled = scale_columns(&mats.f, &variances[k]);
        let sigma = &covs[k];
        output_covariances.push(&mats.c * sigma * mats.c.transpose() + &f_scaled * mats.f.transpose());
        let next_cov = &mats.a * sigma * mats.a.transpose() + &g_scaled * mats.g.transpose();
        covs.push((&next_cov + next_cov.transpose()) * 0.5);
    }

    // Per-step row means and variances of P·V_t, then S·r_k for rows acting
    // at the start of a step.
    let state_means: Vec<DVector<f64>> = free.iter().map(|v| &mats.p * v).collect();
    let state_vars: Vec<DVector<f64>> = covs
        .iter()
        .map(|sigma| {
            let ps = &mats.p * sigma;
            DVector::from_fn(mats.dims.n_rows, |j, _| ps.row(j).dot(&mats.p.row(j)))
        })
        .collect();
    let s_sq = mats.s.map(|c| c * c);
    let rain_means: Vec<DVector<f64>> = means.iter().map(|m| &mats.s * m).collect();
    let rain_vars: Vec<DVector<f64>> = variances.iter().map(|v| &s_sq * v).collect();

    let rows = crate::mpc::horizon_rows(mats, horizon);
    let mut row_means = DVector::zeros(rows.len());
    let mut row_variances = DVector::zeros(rows.len());
    for (h, r) in rows.iter().enumerate() {
        let j = r.row;
        if mats.rows[j].kind.is_state_row() {
            row_means[h] = state_means[r.step + 1][j];
            row_variances[h] = state_vars[r.step + 1][j];
        } else {
            row_means[h] = state_means[r.step][j] + rain_means[r.step][j];
            row_variances[h] = state_vars[r.step][j] + rain_vars[r.step][j];
        }
        row_variances[h] = row_variances[h].max(0.0);
    }

    Ok(MomentTrajectory {
        mean_volumes,
        volume_covariances: covs,
        output_covariances,
        rows,
        row_means,
        row_variances,
    })
}

fn scale_columns(m: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * w[j])
}

/// How the stochastic part of one horizon row is treated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowUncertainty {
    Deterministic,
    /// `coefficient · w` for a single forecast entry `w`.
    Single { step: usize, input: usize, coefficient: f64 },
    /// Several independent terms, approximated as Gaussian.
    Aggregate { stddev: f64 },
}

impl RowUncertainty {
    pub fn offset(&self, uncertainty: &UncertaintyModel, gamma: f64) -> Result<f64, CcError> {
        check_gamma(gamma)?;
        Ok(match *self {
            RowUncertainty::Deterministic => 0.0,
            RowUncertainty::Single { step, input, coefficient } => {
                let spec = uncertainty.spec(step, input);
                let p = if coefficient > 0.0 { gamma } else { 1.0 - gamma };
                coefficient * (spec.quantile(p)? - uncertainty.moments[step][input].0)
            }
            RowUncertainty::Aggregate { stddev } => stddev * std_normal_quantile(gamma)?,
        })
    }
}

fn check_gamma(gamma: f64) -> Result<(), CcError> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(CcError::Gamma(gamma))
    }
}

/// Classify every horizon row by counting the uncertain terms in its
/// stochastic part: rain entries with nonzero coefficient and variance,
/// plus the initial volumes when their covariance reaches the row.
pub fn classify_rows(
    structure: &HorizonStructure,
    moments: &MomentTrajectory,
    uncertainty: &UncertaintyModel,
) -> Vec<RowUncertainty> {
    let l = uncertainty.n_inputs();
    let variances = uncertainty.variances();
    let initial = uncertainty.initial_covariance();
    let n_rows = structure.rows.len();
    let mut terms = vec![0usize; n_rows];
    let mut single = vec![None; n_rows];
    if let Some(cov) = initial {
        for h in 0..n_rows {
            let v = structure.v0.row(h);
            if (v * cov * v.transpose())[0] > 0.0 {
                terms[h] += 2;
            }
        }
    }
    for (i, column) in structure.rain_pattern.iter().enumerate() {
        if variances[i / l][i % l] <= 0.0 {
            continue;
        }
        for &(h, c) in column {
            terms[h] += 1;
            single[h] = Some((i / l, i % l, c));
        }
    }
    (0..n_rows)
        .map(|h| match (terms[h], single[h]) {
            (0, _) => RowUncertainty::Deterministic,
            (1, Some((step, input, coefficient))) => RowUncertainty::Single { step, input, coefficient },
            _ => RowUncertainty::Aggregate {
                stddev: moments.row_variances[h].sqrt(),
            },
        })
        .collect()
}

pub fn offsets(kinds: &[RowUncertainty], uncertainty: &UncertaintyModel, gamma: f64) -> Result<Vec<f64>, CcError> {
    kinds.iter().map(|k| k.offset(uncertainty, gamma)).collect()
}

/// Tightened inequalities over the stacked controls:
/// `control_coefficients · U ≤ bounds`.
#[derive(Debug, Clone, PartialEq)]
pub struct TightenedSystem {
    pub rows: Vec<HorizonRow>,
    pub control_coefficients: DMatrix<f64>,
    pub bounds: DVector<f64>,
    pub offsets: Vec<f64>,
    pub kinds: Vec<RowUncertainty>,
}

pub fn tighten_constraints(
    mats: &NetworkMatrices,
    moments: &MomentTrajectory,
    uncertainty: &UncertaintyModel,
    gamma: f64,
) -> Result<TightenedSystem, CcError> {
    check_gamma(gamma)?;
    let structure = HorizonStructure::new(mats, uncertainty.horizon());
    let kinds = classify_rows(&structure, moments, uncertainty);
    let offsets = offsets(&kinds, uncertainty, gamma)?;
    let bounds = DVector::from_fn(structure.rows.len(), |h, _| {
        structure.bound[h] - moments.row_means[h] - offsets[h]
    });
    Ok(TightenedSystem {
        rows: structure.rows.clone(),
        control_coefficients: structure.control,
        bounds,
        offsets,
        kinds,
    })
}

/// Full horizon program of the chance-constrained controller.
pub fn build_cc_program(
    mats: &NetworkMatrices,
    config: &MpcConfig,
    v0: &DVector<f64>,
    u_prev: &DVector<f64>,
    uncertainty: &UncertaintyModel,
    gamma: f64,
) -> Result<HorizonProgram, CcError> {
    check_gamma(gamma)?;
    check_horizon(mats, uncertainty)?;
    let means = uncertainty.means();
    check_inputs(mats, config, v0, u_prev, &means)?;
    let moments = propagate_moments(mats, v0, uncertainty, None)?;
    let structure = HorizonStructure::new(mats, config.horizon);
    let kinds = classify_rows(&structure, &moments, uncertainty);
    let offsets = offsets(&kinds, uncertainty, gamma)?;
    Ok(assemble_program(
        mats,
        config,
        v0,
        u_prev,
        &means,
        Some(&offsets),
        Provenance::ChanceConstrained { gamma },
        moments.trace_term(config),
    ))
}

/// Probability levels tried in order until one gives a feasible program.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSchedule(Vec<f64>);

impl GammaSchedule {
    pub fn new(levels: Vec<f64>) -> Result<Self, CcError> {
        if levels.is_empty() {
            return Err(CcError::Schedule("empty".into()));
        }
        if let Some(&g) = levels.iter().find(|&&g| !(g > 0.0 && g < 1.0)) {
            return Err(CcError::Schedule(format!("level {g} outside (0, 1)")));
        }
        if levels.windows(2).any(|w| w[1] >= w[0]) {
            return Err(CcError::Schedule("levels must be strictly decreasing".into()));
        }
        Ok(Self(levels))
    }

    pub fn fixed(gamma: f64) -> Result<Self, CcError> {
        Self::new(vec![gamma])
    }

    pub fn levels(&self) -> &[f64] {
        &self.0
    }
}

impl Default for GammaSchedule {
    fn default() -> Self {
        Self(vec![0.95, 0.90, 0.80, 0.70, 0.60, 0.50])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackoffStep {
    /// First planned control; `None` unless a level was feasible.
    pub controls: Option<DVector<f64>>,
    pub gamma_used: Option<f64>,
    /// Levels found infeasible before `gamma_used` (all of them when none
    /// worked).
    pub gamma_tried: Vec<f64>,
    pub status: StepStatus,
}

/// Solve the chance-constrained program at each scheduled level until one
/// is feasible.
pub fn control_step_with_backoff(
    mats: &NetworkMatrices,
    config: &MpcConfig,
    v0: &DVector<f64>,
    u_prev: &DVector<f64>,
    uncertainty: &UncertaintyModel,
    schedule: &GammaSchedule,
) -> Result<BackoffStep, CcError> {
    let mut tried = Vec::new();
    let mut status = StepStatus::Infeasible;
    for &gamma in schedule.levels() {
        let program = build_cc_program(mats, config, v0, u_prev, uncertainty, gamma)?;
        let solution = qp::solve(&program.problem, &QpSettings::default()).map_err(MpcError::from)?;
        match solution.status {
            QpStatus::Optimal => {
                return Ok(BackoffStep {
                    controls: Some(program.controls(&solution.x, 0)),
                    gamma_used: Some(gamma),
                    gamma_tried: tried,
                    status: StepStatus::Feasible,
                })
            }
            QpStatus::Infeasible => {}
            QpStatus::MaxIterations => status = StepStatus::MaxIterations,
        }
        tried.push(gamma);
    }
    Ok(BackoffStep {
        controls: None,
        gamma_used: None,
        gamma_tried: tried,
        status,
    })
}

/// Forecast distribution available to a controller at step `k`.
pub trait UncertaintySource {
    fn window(&self, k: usize, horizon: usize) -> UncertaintyModel;
}

/// Chance-constrained MPC with probability back-off.
pub struct CcMpcController<U> {
    mpc: Arc<CondensedMpc>,
    source: U,
    schedule: GammaSchedule,
    warm: Vec<WarmStart>,
    memory: PlanMemory,
    name: String,
}

impl<U: UncertaintySource> CcMpcController<U> {
    pub fn new(mpc: Arc<CondensedMpc>, source: U, schedule: GammaSchedule, name: impl Into<String>) -> Self {
        let warm = vec![WarmStart::default(); schedule.levels().len()];
        Self {
            mpc,
            source,
            schedule,
            warm,
            memory: PlanMemory::default(),
            name: name.into(),
        }
    }

    /// Start every probability level from a known active set.
    pub fn with_warm_start(mut self, warm: WarmStart) -> Self {
        for w in &mut self.warm {
            *w = warm.clone();
        }
        self
    }

    fn plan(&mut self, k: usize, state: &PlantState) -> Result<ControlDecision, CcError> {
        let mats = self.mpc.matrices();
        let v0 = measured_volumes(mats, state);
        let u_prev = DVector::from_vec(state.previous_controls.clone());
        let model = self.source.window(k, self.mpc.horizon());
        check_horizon(mats, &model)?;
        let means = model.means();
        check_inputs(mats, self.mpc.config(), &v0, &u_prev, &means)?;
        let moments = propagate_moments(mats, &v0, &model, None)?;
        let kinds = classify_rows(self.mpc.structure(), &moments, &model);

        let mut tried = Vec::new();
        let mut status = StepStatus::Infeasible;
        for (i, &gamma) in self.schedule.levels().iter().enumerate() {
            let off = offsets(&kinds, &model, gamma)?;
            let out = self.mpc.solve(&v0, &u_prev, &means, Some(&off), &mut self.warm[i]);
            if out.status.is_feasible() {
                let first = out.plan[0].iter().copied().collect();
                self.memory.store(k, out.plan);
                return Ok(ControlDecision {
                    controls: first,
                    status: StepStatus::Feasible,
                    gamma_used: Some(gamma),
                    gamma_tried: tried,
                });
            }
            if out.status == StepStatus::MaxIterations {
                status = out.status;
            }
            tried.push(gamma);
        }
        Ok(ControlDecision {
            controls: self.memory.fallback(k, &state.previous_controls),
            status,
            gamma_used: None,
            gamma_tried: tried,
        })
    }
}

impl<U: UncertaintySource> Controller for CcMpcController<U> {
    fn decide(&mut self, k: usize, state: &PlantState) -> ControlDecision {
        self.plan(k, state)
            .unwrap_or_else(|_| ControlDecision::hold(&state.previous_controls, StepStatus::Failed))
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

#[cfg(test)]
mod tests;
