//! Step-rain experiments: scenario construction, forecast sampling,
//! duration × intensity sweeps and outcome classification.

use std::fmt;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ccmpc::{CcMpcController, GammaSchedule, UncertaintyModel, UncertaintySource};
use crate::distributions::{GaussianSpec, TruncatedGaussianSpec};
use crate::mpc::{CondensedMpc, ForecastSource, MpcConfig, MpcController, SeriesForecast, WarmStart};
use crate::network::{assemble_control_model, NetworkTopology};
use crate::qp::QpSettings;
use crate::simulator::{fmt_num, run_closed_loop, steady_state, Controller, Plant, PlantState, SimError, SimulationTrace};

pub const DRY_FLOW: f64 = 0.04;
pub const PRE_DRY: f64 = 2.0 * 3600.0;
pub const POST_DRY: f64 = 19.0 * 3600.0;
/// Weir overflow (m³) below which a run counts as overflow-free.
pub const OVERFLOW_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("invalid sweep grid: {0}")]
    Grid(String),
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("malformed sweep record: {0}")]
    Record(String),
}

/// Dry weather, a constant-intensity rain step, dry weather.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RainScenario {
    /// Dry-weather intensity (μm/s).
    pub dry_flow: f64,
    /// Seconds of dry weather before the step.
    pub pre_dry: f64,
    pub rain_duration: f64,
    /// Intensity added to the dry flow during the step (μm/s).
    pub rain_intensity: f64,
    pub post_dry: f64,
    /// Offset added to the forecast mean (μm/s).
    #[serde(default)]
    pub bias: f64,
}

impl RainScenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let finite = [self.dry_flow, self.pre_dry, self.rain_duration, self.rain_intensity, self.post_dry, self.bias];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(ScenarioError::Scenario("all fields must be finite".into()));
        }
        if self.pre_dry <= 0.0 || self.rain_duration <= 0.0 || self.post_dry <= 0.0 {
            return Err(ScenarioError::Scenario("durations must be positive".into()));
        }
        if self.dry_flow < 0.0 || self.rain_intensity < 0.0 {
            return Err(ScenarioError::Scenario("intensities must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.pre_dry + self.rain_duration + self.post_dry
    }

    pub fn n_steps(&self, delta_t: f64) -> usize {
        (self.total_duration() / delta_t - 1e-9).ceil() as usize
    }

    /// Intensity at time `t` (s).
    pub fn intensity_at(&self, t: f64) -> f64 {
        let start = self.pre_dry;
        if t >= start && t < start + self.rain_duration {
            self.dry_flow + self.rain_intensity
        } else {
            self.dry_flow
        }
    }

    /// Mean intensity over each step of length `delta_t`.
    pub fn profile(&self, delta_t: f64) -> Vec<f64> {
        let (start, end) = (self.pre_dry, self.pre_dry + self.rain_duration);
        (0..self.n_steps(delta_t))
            .map(|k| {
                let (a, b) = (k as f64 * delta_t, (k + 1) as f64 * delta_t);
                let wet = (b.min(end) - a.max(start)).max(0.0) / delta_t;
                self.dry_flow + wet * self.rain_intensity
            })
            .collect()
    }
}

/// The standard experiment: 2 h dry, `duration` seconds of rain at
/// `intensity` above the dry flow, 19 h dry.
pub fn make_step_scenario(duration: f64, intensity: f64) -> Result<RainScenario, ScenarioError> {
    if !(duration > 0.0) || !(intensity >= 0.0) {
        return Err(ScenarioError::Scenario(format!(
            "duration must be positive and intensity nonnegative, got {duration} s and {intensity}"
        )));
    }
    let scenario = RainScenario {
        dry_flow: DRY_FLOW,
        pre_dry: PRE_DRY,
        rain_duration: duration,
        rain_intensity: intensity,
        post_dry: POST_DRY,
        bias: 0.0,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Forecast spec for an actual intensity: mean `actual + bias`,
/// σ = 0.01 + actual/3, truncated to `[0, mean + 3σ]`.
pub fn forecast_spec(actual: f64, bias: f64) -> TruncatedGaussianSpec {
    let mean = (actual + bias).max(0.0);
    let sd = 0.01 + actual / 3.0;
    let base = GaussianSpec::new(mean, sd).expect("finite forecast");
    TruncatedGaussianSpec::new(base, 0.0, mean + 3.0 * sd).expect("forecast truncation has mass")
}

/// Per-step forecast distributions of a scenario, shared by every rain
/// input.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionModel {
    pub specs: Vec<TruncatedGaussianSpec>,
    /// Spec used past the end of the scenario.
    pub tail: TruncatedGaussianSpec,
    pub n_inputs: usize,
}

impl PredictionModel {
    pub fn new(scenario: &RainScenario, delta_t: f64, n_inputs: usize) -> Self {
        Self {
            specs: scenario.profile(delta_t).iter().map(|&a| forecast_spec(a, scenario.bias)).collect(),
            tail: forecast_spec(scenario.dry_flow, scenario.bias),
            n_inputs,
        }
    }

    pub fn spec(&self, k: usize) -> &TruncatedGaussianSpec {
        self.specs.get(k).unwrap_or(&self.tail)
    }
}

impl ForecastSource for PredictionModel {
    fn forecast(&self, k: usize, horizon: usize) -> Vec<DVector<f64>> {
        (k..k + horizon)
            .map(|t| DVector::from_element(self.n_inputs, self.spec(t).base().mean()))
            .collect()
    }
}

impl UncertaintySource for PredictionModel {
    fn window(&self, k: usize, horizon: usize) -> UncertaintyModel {
        let steps = (k..k + horizon).map(|t| vec![*self.spec(t); self.n_inputs]).collect();
        UncertaintyModel::new(steps).expect("forecast window is well formed")
    }
}

/// Identifies one sampled forecast realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RealizationKey {
    pub seed: u64,
    pub cell: u64,
    pub realization: u64,
}

/// Uniform draw in (0, 1) addressed by (key, step).
pub fn counter_uniform(key: RealizationKey, step: u64) -> f64 {
    let mut bytes = [0u8; 32];
    for (i, word) in [key.seed, key.cell, key.realization, step].iter().enumerate() {
        bytes[8 * i..8 * i + 8].copy_from_slice(&word.to_le_bytes());
    }
    let bits = ChaCha8Rng::from_seed(bytes).next_u64() >> 11;
    (bits as f64 + 0.5) / (1u64 << 53) as f64
}

/// One sampled intensity per step, drawn by inverse CDF.
pub fn sample_prediction(model: &PredictionModel, key: RealizationKey) -> Vec<f64> {
    model
        .specs
        .iter()
        .enumerate()
        .map(|(k, spec)| spec.quantile(counter_uniform(key, k as u64)).expect("p in (0, 1)"))
        .collect()
}

/// Controller families compared in the experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerKind {
    /// Deterministic MPC that sees the actual rain.
    PerfectMpc,
    /// Deterministic MPC on one sampled forecast per realization.
    ImperfectMpc,
    /// Chance-constrained MPC on the forecast distribution.
    CcMpc(GammaSchedule),
}

impl ControllerKind {
    pub fn cc(gamma: f64) -> Self {
        ControllerKind::CcMpc(GammaSchedule::fixed(gamma).expect("gamma in (0, 1)"))
    }

    pub fn label(&self) -> &'static str {
        match self {
            ControllerKind::PerfectMpc => "perfect_mpc",
            ControllerKind::ImperfectMpc => "imperfect_mpc",
            ControllerKind::CcMpc(_) => "ccmpc",
        }
    }

    /// Probability levels as written to CSV (`;`-separated, empty for
    /// deterministic controllers).
    pub fn gamma_field(&self) -> String {
        match self {
            ControllerKind::CcMpc(s) => s.levels().iter().map(|&g| fmt_num(g)).collect::<Vec<_>>().join(";"),
            _ => String::new(),
        }
    }

    /// Whether every realization of a cell gives the same run.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, ControllerKind::ImperfectMpc)
    }

    pub fn parse(label: &str, gamma: &str) -> Result<Self, ScenarioError> {
        match label {
            "perfect_mpc" => Ok(ControllerKind::PerfectMpc),
            "imperfect_mpc" => Ok(ControllerKind::ImperfectMpc),
            "ccmpc" => {
                let levels = gamma
                    .split(';')
                    .map(|g| g.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| ScenarioError::Record(format!("gamma '{gamma}': {e}")))?;
                GammaSchedule::new(levels)
                    .map(ControllerKind::CcMpc)
                    .map_err(|e| ScenarioError::Record(e.to_string()))
            }
            other => Err(ScenarioError::Record(format!("unknown controller '{other}'"))),
        }
    }

    pub fn display_name(&self) -> String {
        match self {
            ControllerKind::CcMpc(_) => format!("ccmpc_{}", self.gamma_field().replace(';', "_")),
            other => other.label().to_string(),
        }
    }
}

/// Controllers and plant for one network, shared across runs.
pub struct Experiment {
    topology: NetworkTopology,
    plant: Plant,
    mpc: Arc<CondensedMpc>,
    initial: PlantState,
    /// Active set of the dry-weather plan at the initial state.
    dry_warm: WarmStart,
}

impl Experiment {
    pub fn new(topology: &NetworkTopology, config: &MpcConfig) -> Result<Self, ScenarioError> {
        config.validate().map_err(|e| ScenarioError::Scenario(e.to_string()))?;
        let plant = Plant::new(topology)?;
        let mats = assemble_control_model(topology);
        let mpc = Arc::new(CondensedMpc::new(&mats, config, QpSettings::default()));
        let dry = vec![DRY_FLOW; plant.n_rain()];
        let initial = PlantState::new(steady_state(topology, &dry), vec![0.0; plant.n_controls()]);
        let mut dry_warm = WarmStart::default();
        let v0 = DVector::from_vec(initial.volumes.clone());
        let u0 = DVector::from_vec(initial.previous_controls.clone());
        let forecast = vec![DVector::from_vec(dry); config.horizon];
        mpc.solve(&v0, &u0, &forecast, None, &mut dry_warm);
        Ok(Self {
            topology: topology.clone(),
            plant,
            mpc,
            initial,
            dry_warm,
        })
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn config(&self) -> &MpcConfig {
        self.mpc.config()
    }

    pub fn delta_t(&self) -> f64 {
        self.topology.delta_t
    }

    pub fn initial_state(&self) -> &PlantState {
        &self.initial
    }

    pub fn prediction(&self, scenario: &RainScenario) -> PredictionModel {
        PredictionModel::new(scenario, self.delta_t(), self.plant.n_rain())
    }

    /// Closed-loop run of `kind` on `scenario`. `key` selects the sampled
    /// forecast of the imperfect controller.
    pub fn run(
        &self,
        scenario: &RainScenario,
        kind: &ControllerKind,
        key: RealizationKey,
    ) -> Result<SimulationTrace, ScenarioError> {
        scenario.validate()?;
        let n_rain = self.plant.n_rain();
        let profile = scenario.profile(self.delta_t());
        let actual: Vec<Vec<f64>> = profile.iter().map(|&i| vec![i; n_rain]).collect();
        let model = self.prediction(scenario);
        let series = |values: &[f64]| {
            SeriesForecast::new(
                values.iter().map(|&i| DVector::from_element(n_rain, i)).collect(),
                DVector::from_element(n_rain, model.tail.base().mean()),
            )
        };
        let mut controller: Box<dyn Controller> = match kind {
            ControllerKind::PerfectMpc => Box::new(
                MpcController::new(self.mpc.clone(), model, kind.label()).with_warm_start(self.dry_warm.clone()),
            ),
            ControllerKind::ImperfectMpc => {
                let sampled = sample_prediction(&model, key);
                Box::new(
                    MpcController::new(self.mpc.clone(), series(&sampled), kind.label())
                        .with_warm_start(self.dry_warm.clone()),
                )
            }
            ControllerKind::CcMpc(schedule) => Box::new(
                CcMpcController::new(self.mpc.clone(), model, schedule.clone(), kind.label())
                    .with_warm_start(self.dry_warm.clone()),
            ),
        };
        Ok(run_closed_loop(&self.plant, controller.as_mut(), &actual, self.initial.clone())?)
    }
}

/// Classification of one closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    FeasibleClean,
    /// First step whose controller did not return a feasible plan.
    Infeasible(usize),
    /// Every step feasible, yet the weirs spilled.
    FalsePositiveOverflow,
    /// The run could not be simulated.
    Failed,
}

impl Outcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Outcome::FeasibleClean | Outcome::FalsePositiveOverflow)
    }

    pub fn infeasible_step(&self) -> Option<usize> {
        match self {
            Outcome::Infeasible(k) => Some(*k),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Result<Self, ScenarioError> {
        match s {
            "feasible_clean" => Ok(Outcome::FeasibleClean),
            "false_positive_overflow" => Ok(Outcome::FalsePositiveOverflow),
            "failed" => Ok(Outcome::Failed),
            _ => s
                .strip_prefix("infeasible_step_")
                .and_then(|k| k.parse().ok())
                .map(Outcome::Infeasible)
                .ok_or_else(|| ScenarioError::Record(format!("unknown status '{s}'"))),
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::FeasibleClean => f.write_str("feasible_clean"),
            Outcome::Infeasible(k) => write!(f, "infeasible_step_{k}"),
            Outcome::FalsePositiveOverflow => f.write_str("false_positive_overflow"),
            Outcome::Failed => f.write_str("failed"),
        }
    }
}

/// Classify a complete trace. `benchmark_feasible` is carried alongside in
/// sweep records and does not change the class.
pub fn classify_outcome(trace: &SimulationTrace, _benchmark_feasible: bool) -> Outcome {
    match trace.first_infeasible_step() {
        Some(k) => Outcome::Infeasible(k),
        None if trace.total_overflow() > OVERFLOW_TOLERANCE => Outcome::FalsePositiveOverflow,
        None => Outcome::FeasibleClean,
    }
}

/// Durations × intensities × realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    /// Rain durations (s).
    pub durations: Vec<f64>,
    /// Step intensities (μm/s).
    pub intensities: Vec<f64>,
    pub realizations_per_cell: usize,
    pub seed: u64,
}

impl SweepGrid {
    /// Durations {0.5, 1.5, 3, 5} h, intensities 0.25..6 step 0.25, 10
    /// realizations.
    pub fn coarse(seed: u64) -> Self {
        Self {
            durations: [0.5, 1.5, 3.0, 5.0].iter().map(|h| h * 3600.0).collect(),
            intensities: (1..=24).map(|i| i as f64 * 0.25).collect(),
            realizations_per_cell: 10,
            seed,
        }
    }

    /// Durations 0.5..5 h step 0.5 h, intensities 0.1..11 step 0.1, 10
    /// realizations.
    pub fn full(seed: u64) -> Self {
        Self {
            durations: (1..=10).map(|i| i as f64 * 1800.0).collect(),
            intensities: (1..=110).map(|i| i as f64 / 10.0).collect(),
            realizations_per_cell: 10,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.durations.is_empty() || self.intensities.is_empty() || self.realizations_per_cell == 0 {
            return Err(ScenarioError::Grid("grid must have durations, intensities and realizations".into()));
        }
        if self.durations.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(ScenarioError::Grid("durations must be positive".into()));
        }
        if self.intensities.iter().any(|i| !(i.is_finite() && *i >= 0.0)) {
            return Err(ScenarioError::Grid("intensities must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.durations.len() * self.intensities.len()
    }

    /// `(duration index, intensity index)` of a cell.
    pub fn cell_indices(&self, cell: usize) -> (usize, usize) {
        (cell / self.intensities.len(), cell % self.intensities.len())
    }
}

/// One realization of one controller in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub realization: usize,
    pub outcome: Outcome,
    pub overflow: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub duration: f64,
    pub intensity: f64,
    pub controller: ControllerKind,
    pub benchmark_feasible: bool,
    pub records: Vec<RunRecord>,
}

impl CellOutcome {
    pub fn feasible_count(&self) -> usize {
        self.records.iter().filter(|r| r.outcome.is_feasible()).count()
    }

    pub fn false_positive_count(&self) -> usize {
        self.records.iter().filter(|r| r.outcome == Outcome::FalsePositiveOverflow).count()
    }

    pub fn all_feasible(&self) -> bool {
        self.feasible_count() == self.records.len()
    }
}

fn record_of(result: Result<SimulationTrace, ScenarioError>, realization: usize, benchmark: bool) -> RunRecord {
    match result {
        Ok(trace) => RunRecord {
            realization,
            outcome: classify_outcome(&trace, benchmark),
            overflow: trace.total_overflow(),
        },
        Err(_) => RunRecord {
            realization,
            outcome: Outcome::Failed,
            overflow: 0.0,
        },
    }
}

/// Run every controller on every cell of the grid with `jobs` workers.
///
/// Output is ordered by cell (duration outer, intensity inner), then by the
/// order of `kinds`, independent of `jobs`. Deterministic controllers are
/// simulated once per cell and their record repeated for each realization;
/// the benchmark reuses a requested perfect-MPC run.
pub fn run_sweep(
    experiment: &Experiment,
    grid: &SweepGrid,
    kinds: &[ControllerKind],
    jobs: usize,
) -> Result<Vec<CellOutcome>, ScenarioError> {
    grid.validate()?;
    let n_cells = grid.n_cells();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Vec<CellOutcome>>>> = Mutex::new(vec![None; n_cells]);
    let work = || loop {
        let cell = next.fetch_add(1, Ordering::Relaxed);
        if cell >= n_cells {
            break;
        }
        let out = run_cell(experiment, grid, kinds, cell);
        slots.lock().expect("no worker panicked")[cell] = Some(out);
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.max(1) {
            s.spawn(work);
        }
        work();
    });
    Ok(slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .flat_map(|c| c.expect("every cell ran"))
        .collect())
}

fn run_cell(experiment: &Experiment, grid: &SweepGrid, kinds: &[ControllerKind], cell: usize) -> Vec<CellOutcome> {
    let (di, ii) = grid.cell_indices(cell);
    let (duration, intensity) = (grid.durations[di], grid.intensities[ii]);
    let realizations = grid.realizations_per_cell;
    let key = |r: usize| RealizationKey {
        seed: grid.seed,
        cell: cell as u64,
        realization: r as u64,
    };
    let scenario = match make_step_scenario(duration, intensity) {
        Ok(s) => s,
        Err(_) => {
            let failed = (0..realizations)
                .map(|r| RunRecord {
                    realization: r,
                    outcome: Outcome::Failed,
                    overflow: 0.0,
                })
                .collect::<Vec<_>>();
            return kinds
                .iter()
                .map(|kind| CellOutcome {
                    duration,
                    intensity,
                    controller: kind.clone(),
                    benchmark_feasible: false,
                    records: failed.clone(),
                })
                .collect();
        }
    };
    let benchmark_trace = experiment.run(&scenario, &ControllerKind::PerfectMpc, key(0));
    let benchmark_feasible = matches!(&benchmark_trace, Ok(t) if t.all_feasible());
    let benchmark = record_of(benchmark_trace, 0, benchmark_feasible);
    kinds
        .iter()
        .map(|kind| {
            let records = if kind.is_deterministic() {
                let base = if *kind == ControllerKind::PerfectMpc {
                    benchmark.clone()
                } else {
                    record_of(experiment.run(&scenario, kind, key(0)), 0, benchmark_feasible)
                };
                (0..realizations).map(|r| RunRecord { realization: r, ..base.clone() }).collect()
            } else {
                (0..realizations)
                    .map(|r| record_of(experiment.run(&scenario, kind, key(r)), r, benchmark_feasible))
                    .collect()
            };
            CellOutcome {
                duration,
                intensity,
                controller: kind.clone(),
                benchmark_feasible,
                records,
            }
        })
        .collect()
}

/// One row of the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub duration_s: f64,
    pub intensity_ums: f64,
    pub realization: usize,
    pub controller: String,
    pub gamma: String,
    pub status: String,
    pub infeasible_step: Option<usize>,
    pub overflow_m3: f64,
    pub benchmark_feasible: bool,
}

impl SweepRecord {
    pub fn outcome(&self) -> Result<Outcome, ScenarioError> {
        Outcome::parse(&self.status)
    }

    pub fn kind(&self) -> Result<ControllerKind, ScenarioError> {
        ControllerKind::parse(&self.controller, &self.gamma)
    }
}

const SWEEP_HEADER: [&str; 9] = [
    "duration_s",
    "intensity_ums",
    "realization",
    "controller",
    "gamma",
    "status",
    "infeasible_step",
    "overflow_m3",
    "benchmark_feasible",
];

pub fn sweep_records(cells: &[CellOutcome]) -> Vec<SweepRecord> {
    cells
        .iter()
        .flat_map(|c| {
            c.records.iter().map(move |r| SweepRecord {
                duration_s: c.duration,
                intensity_ums: c.intensity,
                realization: r.realization,
                controller: c.controller.label().to_string(),
                gamma: c.controller.gamma_field(),
                status: r.outcome.to_string(),
                infeasible_step: r.outcome.infeasible_step(),
                overflow_m3: r.overflow,
                benchmark_feasible: c.benchmark_feasible,
            })
        })
        .collect()
}

/// Write records with the header
/// `duration_s,intensity_ums,realization,controller,gamma,status,infeasible_step,overflow_m3,benchmark_feasible`.
pub fn write_sweep_csv<W: Write>(out: W, records: &[SweepRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in records {
        w.write_record([
            fmt_num(r.duration_s),
            fmt_num(r.intensity_ums),
            r.realization.to_string(),
            r.controller.clone(),
            r.gamma.clone(),
            r.status.clone(),
            r.infeasible_step.map(|k| k.to_string()).unwrap_or_default(),
            fmt_num(r.overflow_m3),
            r.benchmark_feasible.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a sweep CSV, checking the header and every status field. Lines
/// starting with `#` are skipped.
pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepRecord>, ScenarioError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header = reader.headers().map_err(|e| ScenarioError::Record(e.to_string()))?;
    if header.is_empty() {
        return Ok(Vec::new());
    }
    if header.iter().ne(SWEEP_HEADER.iter().copied()) {
        return Err(ScenarioError::Record(format!("unexpected header: {}", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<SweepRecord>() {
        let record = row.map_err(|e| ScenarioError::Record(e.to_string()))?;
        record.outcome()?;
        record.kind()?;
        out.push(record);
    }
    Ok(out)
}

/// Largest intensity at one duration below which every cell is feasible in
/// every realization (0 when the lowest cell already fails).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityLine {
    pub controller: String,
    pub duration_s: f64,
    pub max_feasible_intensity: f64,
}

/// Feasibility lines per controller (in first-seen order) and duration.
pub fn feasibility_lines(cells: &[CellOutcome]) -> Vec<FeasibilityLine> {
    let mut names: Vec<String> = Vec::new();
    for c in cells {
        let name = c.controller.display_name();
        if !names.contains(&name) {
            names.push(name);
        }
    }
    let mut lines = Vec::new();
    for name in &names {
        let mut durations: Vec<f64> = Vec::new();
        for c in cells.iter().filter(|c| &c.controller.display_name() == name) {
            if !durations.contains(&c.duration) {
                durations.push(c.duration);
            }
        }
        for &d in &durations {
            let mut row: Vec<&CellOutcome> = cells
                .iter()
                .filter(|c| &c.controller.display_name() == name && c.duration == d)
                .collect();
            row.sort_by(|a, b| a.intensity.total_cmp(&b.intensity));
            let max_feasible_intensity = row
                .iter()
                .take_while(|c| c.all_feasible())
                .last()
                .map_or(0.0, |c| c.intensity);
            lines.push(FeasibilityLine {
                controller: name.clone(),
                duration_s: d,
                max_feasible_intensity,
            });
        }
    }
    lines
}

/// Rebuild cells from CSV records, grouping consecutive rows of the same
/// cell and controller.
pub fn cells_from_records(records: &[SweepRecord]) -> Result<Vec<CellOutcome>, ScenarioError> {
    let mut cells: Vec<CellOutcome> = Vec::new();
    for r in records {
        let kind = r.kind()?;
        let record = RunRecord {
            realization: r.realization,
            outcome: r.outcome()?,
            overflow: r.overflow_m3,
        };
        match cells.last_mut() {
            Some(c) if c.duration == r.duration_s && c.intensity == r.intensity_ums && c.controller == kind => {
                c.records.push(record)
            }
            _ => cells.push(CellOutcome {
                duration: r.duration_s,
                intensity: r.intensity_ums,
                controller: kind,
                benchmark_feasible: r.benchmark_feasible,
                records: vec![record],
            }),
        }
    }
    Ok(cells)
}
