//! Summary of one simulation trace.

use serde::Serialize;

use sewer_ccmpc::scenarios::classify_outcome;
use sewer_ccmpc::simulator::{fmt_num, SimulationTrace};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TankRange {
    pub id: String,
    pub min_volume_m3: f64,
    pub max_volume_m3: f64,
}

/// Consecutive steps sharing one controller status.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatusRun {
    pub status: String,
    pub first_step: usize,
    pub last_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaCount {
    /// Probability level, or `none` for steps without one.
    pub gamma: String,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub manifest_sha256: String,
    pub controller: String,
    pub steps: usize,
    pub outcome: String,
    pub first_infeasible_step: Option<usize>,
    pub total_overflow_m3: f64,
    pub tanks: Vec<TankRange>,
    pub feasibility_timeline: Vec<StatusRun>,
    pub gamma_usage: Vec<GammaCount>,
}

pub fn summarize(trace: &SimulationTrace, manifest_sha256: &str) -> SimulationSummary {
    let volumes: Vec<&[f64]> = trace
        .steps
        .iter()
        .map(|s| s.volumes.as_slice())
        .chain(std::iter::once(trace.final_volumes.as_slice()))
        .collect();
    let tanks = trace
        .tank_ids
        .iter()
        .enumerate()
        .map(|(i, id)| TankRange {
            id: id.clone(),
            min_volume_m3: volumes.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min),
            max_volume_m3: volumes.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();

    let mut timeline: Vec<StatusRun> = Vec::new();
    for s in &trace.steps {
        match timeline.last_mut() {
            Some(run) if run.status == s.status.as_str() => run.last_step = s.k,
            _ => timeline.push(StatusRun {
                status: s.status.as_str().to_string(),
                first_step: s.k,
                last_step: s.k,
            }),
        }
    }

    let mut gamma_usage: Vec<GammaCount> = Vec::new();
    for s in &trace.steps {
        let g = s.gamma_used.map(fmt_num).unwrap_or_else(|| "none".into());
        match gamma_usage.iter_mut().find(|c| c.gamma == g) {
            Some(c) => c.steps += 1,
            None => gamma_usage.push(GammaCount { gamma: g, steps: 1 }),
        }
    }
    gamma_usage.sort_by(|a, b| b.gamma.cmp(&a.gamma));

    let outcome = classify_outcome(trace, true);
    SimulationSummary {
        manifest_sha256: manifest_sha256.to_string(),
        controller: trace.controller.clone(),
        steps: trace.steps.len(),
        outcome: outcome.to_string(),
        first_infeasible_step: trace.first_infeasible_step(),
        total_overflow_m3: trace.total_overflow(),
        tanks,
        feasibility_timeline: timeline,
        gamma_usage,
    }
}
