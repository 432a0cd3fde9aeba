use nalgebra::DVector;
use proptest::prelude::*;

use super::controller::PlanMemory;
use super::*;
use crate::network::{assemble_control_model, bundled_ten_tank, fixtures};
use crate::qp::{self, QpSettings};
use crate::simulator::steady_state;

fn ten_tank() -> NetworkMatrices {
    assemble_control_model(&bundled_ten_tank())
}

fn uniform_rain(mats: &NetworkMatrices, steps: usize, intensity: f64) -> Vec<DVector<f64>> {
    vec![DVector::from_element(mats.dims.n_rain, intensity); steps]
}

fn half_full(mats: &NetworkMatrices) -> DVector<f64> {
    &mats.max_volumes * 0.5
}

#[test]
fn single_tank_layout() {
    let mats = assemble_control_model(&fixtures::single_tank(1e-4, 300.0, 1e5));
    let config = MpcConfig {
        horizon: 1,
        ..MpcConfig::default()
    };
    let rain = uniform_rain(&mats, 1, 1.0);
    let program = build_program(&mats, &config, &DVector::from_element(1, 10.0), &DVector::zeros(0), &rain).unwrap();
    assert_eq!(program.problem.n_vars(), 1 + 2);
    assert_eq!(program.layout.v(0), 0..1);
    assert_eq!(program.layout.z(0), 1..3);
    assert_eq!(program.provenance, Provenance::Deterministic);
}

#[test]
fn layout_covers_each_variable_once() {
    let mats = ten_tank();
    let layout = VariableLayout::new(&mats, 5);
    let mut seen = vec![0usize; layout.n_vars()];
    for k in 0..5 {
        for r in [layout.v(k), layout.u(k), layout.z(k), layout.du(k)] {
            for i in r {
                seen[i] += 1;
            }
        }
    }
    assert!(seen.iter().all(|&c| c == 1));
    assert_eq!(layout.names(&mats).len(), layout.n_vars());
}

#[test]
fn move_suppression_keeps_previous_controls() {
    let mats = ten_tank();
    let config = MpcConfig {
        horizon: 6,
        q_weights: [0.0, 0.0],
        r_weight: 1.0,
        z_ref: None,
    };
    let rain = uniform_rain(&mats, 6, 1.0);
    let v0 = half_full(&mats);
    let u_prev = DVector::from_vec(vec![0.2, 0.1, 0.2, 0.3, 0.5]);
    let program = build_program(&mats, &config, &v0, &u_prev, &rain).unwrap();
    let sol = qp::solve(&program.problem, &QpSettings::default()).unwrap();
    assert!(sol.is_optimal());
    for k in 0..6 {
        let u = program.controls(&sol.x, k);
        assert!((u - &u_prev).amax() < 1e-6);
    }
}

#[test]
fn condensed_matches_full_program() {
    let mats = ten_tank();
    let config = MpcConfig {
        horizon: 8,
        ..MpcConfig::default()
    };
    let v0 = half_full(&mats);
    let u_prev = DVector::from_vec(vec![1.0, 0.0, 0.5, 0.5, 2.0]);
    for intensity in [0.5, 2.0, 4.0] {
        let rain = uniform_rain(&mats, 8, intensity);
        let program = build_program(&mats, &config, &v0, &u_prev, &rain).unwrap();
        let full = qp::solve(&program.problem, &QpSettings::default()).unwrap();
        let condensed = CondensedMpc::new(&mats, &config, QpSettings::default());
        let out = condensed.solve(&v0, &u_prev, &rain, None, &mut WarmStart::default());
        assert_eq!(full.is_optimal(), out.status.is_feasible(), "intensity {intensity}");
        if !full.is_optimal() {
            continue;
        }
        for k in 0..8 {
            let diff = (program.controls(&full.x, k) - &out.plan[k]).amax();
            assert!(diff < 1e-5, "intensity {intensity} step {k}: {diff}");
        }
        let full_cost = program.cost(&full.x);
        assert!((full_cost - out.cost).abs() < 1e-7 * full_cost.abs().max(1.0));
    }
}

#[test]
fn program_cost_is_sum_of_stage_costs() {
    let mats = ten_tank();
    let config = MpcConfig {
        horizon: 4,
        ..MpcConfig::default()
    };
    let v0 = half_full(&mats);
    let u_prev = DVector::zeros(mats.dims.n_controls);
    let rain = uniform_rain(&mats, 4, 1.5);
    let program = build_program(&mats, &config, &v0, &u_prev, &rain).unwrap();
    let sol = qp::solve(&program.problem, &QpSettings::default()).unwrap();
    let z_ref = config.reference(&mats);
    let mut total = 0.0;
    for k in 0..4 {
        let x = &sol.x;
        let z: Vec<f64> = x.rows_range(program.layout.z(k)).iter().copied().collect();
        let du: Vec<f64> = x.rows_range(program.layout.du(k)).iter().copied().collect();
        total += stage_cost(&config, &z, &z_ref, &du);
    }
    assert!((program.cost(&sol.x) - total).abs() < 1e-8 * total.max(1.0));
}

#[test]
fn replayed_plan_respects_every_row() {
    let mats = ten_tank();
    let config = MpcConfig {
        horizon: 12,
        ..MpcConfig::default()
    };
    let mut v = half_full(&mats);
    let u_prev = DVector::zeros(mats.dims.n_controls);
    let rain = uniform_rain(&mats, 12, 2.5);
    let condensed = CondensedMpc::new(&mats, &config, QpSettings::default());
    let out = condensed.solve(&v, &u_prev, &rain, None, &mut WarmStart::default());
    assert!(out.status.is_feasible());
    for k in 0..12 {
        let u = &out.plan[k];
        let slack = mats.row_slack(&v, u, &rain[k]);
        for (j, s) in slack.iter().enumerate() {
            if !mats.rows[j].kind.is_state_row() {
                assert!(*s >= -1e-6 * mats.k[j].abs().max(1.0), "step {k} row {j}: {s}");
            }
        }
        v = mats.next_volumes(&v, u, &rain[k]);
        for i in 0..mats.dims.n_tanks {
            let scale = mats.max_volumes[i];
            assert!(v[i] >= -1e-6 * scale && v[i] <= scale * (1.0 + 1e-6), "step {k} tank {i}: {}", v[i]);
        }
    }
}

#[test]
fn empty_network_with_zero_reference_closes_gates() {
    let mats = ten_tank();
    let config = MpcConfig {
        z_ref: Some([0.0, 0.0]),
        horizon: 6,
        ..MpcConfig::default()
    };
    let v0 = DVector::zeros(mats.dims.n_tanks);
    let u_prev = DVector::from_element(mats.dims.n_controls, 1.0);
    let rain = uniform_rain(&mats, 6, 0.0);
    let (u, status) = control_step(&mats, &config, &v0, &u_prev, &rain).unwrap();
    assert!(status.is_feasible());
    assert!(u.amax() < 1e-7, "{u}");
}

#[test]
fn control_step_is_deterministic() {
    let mats = ten_tank();
    let config = MpcConfig {
        horizon: 6,
        ..MpcConfig::default()
    };
    let v0 = half_full(&mats);
    let u_prev = DVector::zeros(mats.dims.n_controls);
    let rain = uniform_rain(&mats, 6, 3.0);
    let a = control_step(&mats, &config, &v0, &u_prev, &rain).unwrap();
    let b = control_step(&mats, &config, &v0, &u_prev, &rain).unwrap();
    assert_eq!(a.1, b.1);
    assert_eq!(a.0.as_slice(), b.0.as_slice());
}

#[test]
fn warm_started_solve_agrees_with_cold() {
    let mats = ten_tank();
    let config = MpcConfig::default();
    let condensed = CondensedMpc::new(&mats, &config, QpSettings::default());
    let topo = bundled_ten_tank();
    let dry = vec![0.04; mats.dims.n_rain];
    let mut v = DVector::from_vec(steady_state(&topo, &dry));
    let mut u_prev = DVector::zeros(mats.dims.n_controls);
    let mut warm = WarmStart::default();
    let mut warm_hits = 0;
    for k in 0..20 {
        let rain = uniform_rain(&mats, config.horizon, if k < 10 { 1.0 } else { 0.04 });
        let hot = condensed.solve(&v, &u_prev, &rain, None, &mut warm);
        let cold = condensed.solve(&v, &u_prev, &rain, None, &mut WarmStart::default());
        assert_eq!(hot.status, cold.status);
        assert!((&hot.plan[0] - &cold.plan[0]).amax() < 1e-6);
        warm_hits += hot.warm_started as usize;
        v = mats.next_volumes(&v, &hot.plan[0], &rain[0]);
        u_prev = hot.plan[0].clone();
    }
    assert!(warm_hits > 10, "{warm_hits}");
}

#[test]
fn input_errors() {
    let mats = ten_tank();
    let config = MpcConfig::default();
    let v0 = half_full(&mats);
    let u_prev = DVector::zeros(mats.dims.n_controls);
    let short = uniform_rain(&mats, 3, 1.0);
    assert!(matches!(
        build_program(&mats, &config, &v0, &u_prev, &short),
        Err(MpcError::Dimension { .. })
    ));
    let rain = uniform_rain(&mats, config.horizon, 1.0);
    let mut over = v0.clone();
    over[0] = mats.max_volumes[0] * 1.01;
    assert!(matches!(
        build_program(&mats, &config, &over, &u_prev, &rain),
        Err(MpcError::InitialState { .. })
    ));
    let bad = MpcConfig {
        q_weights: [0.0, 0.0],
        r_weight: 0.0,
        ..config
    };
    assert!(matches!(bad.validate(), Err(MpcError::Config(_))));
    let zero_horizon = MpcConfig { horizon: 0, ..config };
    assert!(zero_horizon.validate().is_err());
}

#[test]
fn fallback_replays_shifted_plan_then_holds() {
    let mut memory = PlanMemory::default();
    assert_eq!(memory.fallback(3, &[7.0]), vec![7.0]);
    memory.store(5, vec![DVector::from_element(1, 1.0), DVector::from_element(1, 2.0)]);
    assert_eq!(memory.fallback(6, &[7.0]), vec![2.0]);
    assert_eq!(memory.fallback(7, &[7.0]), vec![7.0]);
}

proptest! {
    #[test]
    fn reference_shift_leaves_cost(
        z in prop::array::uniform2(-50.0f64..50.0),
        z_ref in prop::array::uniform2(-50.0f64..50.0),
        shift in -100.0f64..100.0,
        du in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let config = MpcConfig::default();
        let base = stage_cost(&config, &z, &z_ref, &du);
        let zs = [z[0] + shift, z[1] + shift];
        let rs = [z_ref[0] + shift, z_ref[1] + shift];
        let shifted = stage_cost(&config, &zs, &rs, &du);
        prop_assert!((base - shifted).abs() <= 1e-9 * base.max(1.0));
    }
}

