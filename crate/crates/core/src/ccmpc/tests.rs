use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::distributions::std_normal_quantile;
use crate::mpc::build_program;
use crate::network::{assemble_control_model, bundled_ten_tank, fixtures, RowKind};

fn ten_tank() -> NetworkMatrices {
    assemble_control_model(&bundled_ten_tank())
}

fn forecast_spec(intensity: f64) -> TruncatedGaussianSpec {
    let sd = 0.01 + intensity / 3.0;
    TruncatedGaussianSpec::new(GaussianSpec::new(intensity, sd).unwrap(), 0.0, intensity + 3.0 * sd).unwrap()
}

fn forecast_model(mats: &NetworkMatrices, horizon: usize, intensity: f64) -> UncertaintyModel {
    UncertaintyModel::new(vec![vec![forecast_spec(intensity); mats.dims.n_rain]; horizon]).unwrap()
}

fn untruncated_model(mats: &NetworkMatrices, horizon: usize, mean: f64, sd: f64) -> UncertaintyModel {
    let spec = TruncatedGaussianSpec::untruncated(GaussianSpec::new(mean, sd).unwrap());
    UncertaintyModel::new(vec![vec![spec; mats.dims.n_rain]; horizon]).unwrap()
}

/// Rejection sampler built on an independent normal generator.
fn sample_truncated(rng: &mut ChaCha8Rng, spec: &TruncatedGaussianSpec) -> f64 {
    let base = spec.base();
    let normal = Normal::new(base.mean(), base.stddev()).unwrap();
    loop {
        let x = normal.sample(rng);
        if x >= spec.lower() && x <= spec.upper() {
            return x;
        }
    }
}

fn config(horizon: usize) -> MpcConfig {
    MpcConfig {
        horizon,
        ..MpcConfig::default()
    }
}

#[test]
fn zero_variance_means_follow_the_model() {
    let mats = ten_tank();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let means: Vec<DVector<f64>> = (0..6).map(|_| DVector::from_fn(mats.dims.n_rain, |_, _| rng.gen_range(0.0..3.0))).collect();
    let plan: Vec<DVector<f64>> = (0..6).map(|_| DVector::from_fn(mats.dims.n_controls, |_, _| rng.gen_range(0.0..1.0))).collect();
    let model = UncertaintyModel::point(&means).unwrap();
    let v0 = &mats.max_volumes * 0.3;
    let moments = propagate_moments(&mats, &v0, &model, Some(&plan)).unwrap();
    let mut v = v0.clone();
    for k in 0..6 {
        v = mats.next_volumes(&v, &plan[k], &means[k]);
        assert!((&moments.mean_volumes[k + 1] - &v).amax() <= 1e-9 * v.amax());
        assert_eq!(moments.volume_covariances[k + 1].amax(), 0.0);
    }
    assert_eq!(moments.row_variances.amax(), 0.0);
    assert_eq!(moments.trace_term(&config(6)), 0.0);
}

#[test]
fn scalar_variance_matches_geometric_sum() {
    let mats = assemble_control_model(&fixtures::single_tank(2e-4, 300.0, 5e5));
    let a = mats.a[(0, 0)];
    let g = mats.g[(0, 0)];
    let s = 0.4;
    let model = untruncated_model(&mats, 30, 1.0, s);
    let moments = propagate_moments(&mats, &DVector::from_element(1, 100.0), &model, None).unwrap();
    for k in 0..=30 {
        let oracle = g * g * s * s * (1.0 - a.powi(2 * k as i32)) / (1.0 - a * a);
        let got = moments.volume_covariances[k][(0, 0)];
        assert!((got - oracle).abs() <= 1e-12 * oracle.max(1e-300), "k {k}: {got} vs {oracle}");
    }
}

#[test]
fn truncated_means_match_sampled_trajectories() {
    let mats = assemble_control_model(&fixtures::single_tank(2e-4, 300.0, 5e5));
    let spec = TruncatedGaussianSpec::new(GaussianSpec::new(0.2, 0.5).unwrap(), 0.0, 1.7).unwrap();
    let model = UncertaintyModel::new(vec![vec![spec]; 6]).unwrap();
    let v0 = DVector::from_element(1, 50.0);
    let moments = propagate_moments(&mats, &v0, &model, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples = 100_000;
    let mut acc = vec![0.0; 6];
    for _ in 0..samples {
        let mut v = v0[0];
        for slot in acc.iter_mut() {
            let w = sample_truncated(&mut rng, &spec);
            v = mats.a[(0, 0)] * v + mats.g[(0, 0)] * w;
            *slot += v;
        }
    }
    for k in 0..6 {
        let mc = acc[k] / samples as f64;
        let mean = moments.mean_volumes[k + 1][0];
        assert!((mc - mean).abs() <= 1e-2 * mean, "k {k}: {mc} vs {mean}");
    }
    // The base mean would be off by far more than the tolerance.
    let base_mean = mats.a[(0, 0)] * v0[0] + mats.g[(0, 0)] * 0.2;
    assert!((base_mean - moments.mean_volumes[1][0]).abs() > 0.05 * base_mean);
}

#[test]
fn row_variances_agree_across_routes() {
    let mats = ten_tank();
    let n = mats.dims.n_tanks;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-20.0..20.0));
    let cov = &f * f.transpose();
    let steps: Vec<Vec<TruncatedGaussianSpec>> = (0..8)
        .map(|_| (0..mats.dims.n_rain).map(|_| forecast_spec(rng.gen_range(0.0..4.0))).collect())
        .collect();
    let model = UncertaintyModel::new(steps).unwrap().with_initial_covariance(cov.clone()).unwrap();
    let moments = propagate_moments(&mats, &(&mats.max_volumes * 0.5), &model, None).unwrap();
    let structure = HorizonStructure::new(&mats, 8);
    let variances = model.variances();
    let l = mats.dims.n_rain;
    for h in 0..structure.rows.len() {
        let c = structure.rain.row(h);
        let rain_part: f64 = c.iter().enumerate().map(|(i, ci)| ci * ci * variances[i / l][i % l]).sum();
        let v = structure.v0.row(h);
        let initial_part = (v * &cov * v.transpose())[0];
        let coefficient_route = rain_part + initial_part;
        let recursion_route = moments.row_variances[h];
        assert!(
            (coefficient_route - recursion_route).abs() <= 1e-9 * coefficient_route.max(1e-12),
            "row {h}: {coefficient_route} vs {recursion_route}"
        );
    }
}

fn assert_same_program(a: &HorizonProgram, b: &HorizonProgram) {
    assert_eq!(a.problem.h.as_slice(), b.problem.h.as_slice());
    assert_eq!(a.problem.g.as_slice(), b.problem.g.as_slice());
    assert_eq!(a.problem.a_eq.as_slice(), b.problem.a_eq.as_slice());
    assert_eq!(a.problem.b_eq.as_slice(), b.problem.b_eq.as_slice());
    assert_eq!(a.problem.a_in.as_slice(), b.problem.a_in.as_slice());
    let bits = |v: &DVector<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.problem.b_in), bits(&b.problem.b_in));
}

#[test]
fn zero_variance_program_is_the_deterministic_one() {
    let mats = ten_tank();
    let cfg = config(6);
    let means: Vec<DVector<f64>> = (0..6).map(|k| DVector::from_element(mats.dims.n_rain, 0.5 + k as f64)).collect();
    let model = UncertaintyModel::point(&means).unwrap();
    let v0 = &mats.max_volumes * 0.4;
    let u_prev = DVector::from_element(mats.dims.n_controls, 0.1);
    let det = build_program(&mats, &cfg, &v0, &u_prev, &means).unwrap();
    for gamma in [0.6, 0.8, 0.95] {
        let cc = build_cc_program(&mats, &cfg, &v0, &u_prev, &model, gamma).unwrap();
        assert_same_program(&det, &cc);
        assert_eq!(cc.provenance, Provenance::ChanceConstrained { gamma });
    }
}

#[test]
fn half_probability_untruncated_is_the_mean_program() {
    let mats = ten_tank();
    let cfg = config(6);
    let model = untruncated_model(&mats, 6, 1.2, 0.5);
    let v0 = &mats.max_volumes * 0.4;
    let u_prev = DVector::zeros(mats.dims.n_controls);
    let det = build_program(&mats, &cfg, &v0, &u_prev, &model.means()).unwrap();
    let cc = build_cc_program(&mats, &cfg, &v0, &u_prev, &model, 0.5).unwrap();
    assert_same_program(&det, &cc);
    assert!(cc.trace_term > 0.0);
    let settings = QpSettings::default();
    let a = qp::solve(&det.problem, &settings).unwrap();
    let b = qp::solve(&cc.problem, &settings).unwrap();
    assert!((&a.x - &b.x).amax() <= 1e-8);
}

#[test]
fn tightening_nests_and_keeps_dimensions() {
    let mats = ten_tank();
    let cfg = config(8);
    let model = forecast_model(&mats, 8, 2.0);
    let v0 = &mats.max_volumes * 0.4;
    let u_prev = DVector::zeros(mats.dims.n_controls);
    let det = build_program(&mats, &cfg, &v0, &u_prev, &model.means()).unwrap();
    let mut previous: Option<DVector<f64>> = None;
    for gamma in [0.95, 0.9, 0.8, 0.7, 0.6, 0.5] {
        let cc = build_cc_program(&mats, &cfg, &v0, &u_prev, &model, gamma).unwrap();
        assert_eq!(cc.problem.n_vars(), det.problem.n_vars());
        assert_eq!(cc.problem.n_eq(), det.problem.n_eq());
        assert_eq!(cc.problem.n_in(), det.problem.n_in());
        if let Some(prev) = &previous {
            assert!(prev.iter().zip(cc.problem.b_in.iter()).all(|(p, c)| p <= c));
        }
        previous = Some(cc.problem.b_in.clone());
    }
}

#[test]
fn offsets_do_not_depend_on_the_control_plan() {
    let mats = ten_tank();
    let model = forecast_model(&mats, 6, 1.5);
    let v0 = &mats.max_volumes * 0.4;
    let plan: Vec<DVector<f64>> = (0..6).map(|k| DVector::from_element(mats.dims.n_controls, 0.3 * k as f64)).collect();
    let free = propagate_moments(&mats, &v0, &model, None).unwrap();
    let planned = propagate_moments(&mats, &v0, &model, Some(&plan)).unwrap();
    assert_eq!(free.volume_covariances, planned.volume_covariances);
    let a = tighten_constraints(&mats, &free, &model, 0.9).unwrap();
    let b = tighten_constraints(&mats, &planned, &model, 0.9).unwrap();
    assert_eq!(a.offsets, b.offsets);
    assert_eq!(a.bounds, b.bounds);
}

#[test]
fn single_row_bound_matches_hand_expansion() {
    let mats = assemble_control_model(&fixtures::single_tank(2e-4, 300.0, 5e5));
    let (a, g, vmax) = (mats.a[(0, 0)], mats.g[(0, 0)], mats.max_volumes[0]);
    let (mu, sd, gamma) = (3.0, 1.0, 0.9);
    let model = untruncated_model(&mats, 1, mu, sd);
    let v0 = DVector::from_element(1, 2000.0);
    let moments = propagate_moments(&mats, &v0, &model, None).unwrap();
    let system = tighten_constraints(&mats, &moments, &model, gamma).unwrap();
    let row = mats.rows.iter().position(|r| r.kind == RowKind::VolumeMax).unwrap();
    let expected_offset = g * sd * std_normal_quantile(gamma).unwrap();
    assert!((system.offsets[row] - expected_offset).abs() <= 1e-12 * expected_offset);
    let expected_bound = vmax - a * v0[0] - g * mu - expected_offset;
    assert!((system.bounds[row] - expected_bound).abs() <= 1e-9 * vmax);

    // Hold the row at equality: choose v so that a v = vmax − g μ − offset.
    let v = (vmax - g * mu - expected_offset) / a;
    let normal = Normal::new(mu, sd).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let samples = 1_000_000;
    let held = (0..samples).filter(|_| a * v + g * normal.sample(&mut rng) <= vmax).count();
    let freq = held as f64 / samples as f64;
    assert!((freq - gamma).abs() <= 0.005, "{freq}");
}

#[test]
fn exact_truncated_row_holds_with_probability_gamma() {
    let mats = ten_tank();
    let gb = mats.gate_ids.iter().position(|g| g == "GB").unwrap();
    let row = mats
        .rows
        .iter()
        .position(|r| r.kind == RowKind::ControlInflow && r.element == "GB")
        .unwrap();
    let model = forecast_model(&mats, 1, 1.5);
    let v0 = &mats.max_volumes * 0.4;
    let moments = propagate_moments(&mats, &v0, &model, None).unwrap();
    for gamma in [0.95, 0.9, 0.8, 0.7, 0.6] {
        let system = tighten_constraints(&mats, &moments, &model, gamma).unwrap();
        assert!(matches!(system.kinds[row], RowUncertainty::Single { .. }));
        let u_bound = system.bounds[row] / system.control_coefficients[(row, gb)];
        let c6 = mats.catchment_ids.iter().position(|c| c == "c6").unwrap();
        let coefficient = -mats.s[(row, c6)];
        let spec = *model.spec(0, c6);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let samples = 1_000_000;
        let violated = (0..samples)
            .filter(|_| u_bound > coefficient * sample_truncated(&mut rng, &spec))
            .count();
        let freq = violated as f64 / samples as f64;
        assert!(freq <= 1.0 - gamma + 0.005, "gamma {gamma}: {freq}");
    }
}

#[test]
fn aggregate_row_violation_rate_is_near_nominal() {
    let mats = assemble_control_model(&fixtures::single_tank(2e-4, 300.0, 5e5));
    let horizon = 4;
    let (mu, sd) = (2.0, 0.8);
    let model = untruncated_model(&mats, horizon, mu, sd);
    let v0 = DVector::from_element(1, 1000.0);
    let moments = propagate_moments(&mats, &v0, &model, None).unwrap();
    let row = mats.rows.iter().position(|r| r.kind == RowKind::VolumeMax).unwrap();
    let h = (horizon - 1) * mats.dims.n_rows + row;
    let (a, g, vmax) = (mats.a[(0, 0)], mats.g[(0, 0)], mats.max_volumes[0]);
    for gamma in [0.95, 0.8, 0.6] {
        let system = tighten_constraints(&mats, &moments, &model, gamma).unwrap();
        assert!(matches!(system.kinds[h], RowUncertainty::Aggregate { .. }));
        // Shift the initial volume so the row holds at equality.
        let slack = system.bounds[h];
        let v_start = v0[0] + slack / a.powi(horizon as i32);
        let normal = Normal::new(mu, sd).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let samples = 1_000_000;
        let violated = (0..samples)
            .filter(|_| {
                let mut v = v_start;
                for _ in 0..horizon {
                    v = a * v + g * normal.sample(&mut rng);
                }
                v > vmax
            })
            .count();
        let freq = violated as f64 / samples as f64;
        assert!((freq - (1.0 - gamma)).abs() <= 0.015, "gamma {gamma}: {freq}");
    }
}

#[test]
fn schedule_validation() {
    assert!(GammaSchedule::new(vec![0.9, 0.9]).is_err());
    assert!(GammaSchedule::new(vec![0.8, 0.9]).is_err());
    assert!(GammaSchedule::new(vec![1.0]).is_err());
    assert!(GammaSchedule::new(vec![]).is_err());
    assert_eq!(GammaSchedule::default().levels()[0], 0.95);
    assert!(GammaSchedule::fixed(0.7).is_ok());
}

#[test]
fn input_errors() {
    let mats = ten_tank();
    let cfg = config(4);
    let v0 = &mats.max_volumes * 0.4;
    let u_prev = DVector::zeros(mats.dims.n_controls);
    let model = forecast_model(&mats, 4, 1.0);
    assert!(matches!(
        build_cc_program(&mats, &cfg, &v0, &u_prev, &model, 1.0),
        Err(CcError::Gamma(_))
    ));
    let short = forecast_model(&mats, 3, 1.0);
    assert!(build_cc_program(&mats, &cfg, &v0, &u_prev, &short, 0.9).is_err());
    let narrow = UncertaintyModel::new(vec![vec![forecast_spec(1.0); 2]; 4]).unwrap();
    assert!(build_cc_program(&mats, &cfg, &v0, &u_prev, &narrow, 0.9).is_err());
    let bad_cov = DMatrix::from_element(mats.dims.n_tanks, mats.dims.n_tanks, -1.0);
    assert!(model.clone().with_initial_covariance(bad_cov).is_err());
}

#[test]
fn backoff_uses_schedule_head_when_benign() {
    let mats = ten_tank();
    let cfg = config(6);
    let model = forecast_model(&mats, 6, 0.2);
    let v0 = &mats.max_volumes * 0.2;
    let u_prev = DVector::zeros(mats.dims.n_controls);
    let step = control_step_with_backoff(&mats, &cfg, &v0, &u_prev, &model, &GammaSchedule::default()).unwrap();
    assert_eq!(step.gamma_used, Some(0.95));
    assert!(step.gamma_tried.is_empty());
    assert!(step.controls.is_some());
}

#[test]
fn backoff_reports_infeasible_without_controls() {
    let mats = ten_tank();
    let cfg = config(6);
    let model = forecast_model(&mats, 6, 40.0);
    let v0 = mats.max_volumes.clone();
    let u_prev = DVector::zeros(mats.dims.n_controls);
    let schedule = GammaSchedule::default();
    let step = control_step_with_backoff(&mats, &cfg, &v0, &u_prev, &model, &schedule).unwrap();
    assert_eq!(step.status, StepStatus::Infeasible);
    assert!(step.controls.is_none());
    assert_eq!(step.gamma_used, None);
    assert_eq!(step.gamma_tried, schedule.levels());
}

struct FixedWindow(UncertaintyModel);

impl UncertaintySource for FixedWindow {
    fn window(&self, _k: usize, _horizon: usize) -> UncertaintyModel {
        self.0.clone()
    }
}

#[test]
fn controller_matches_full_backoff_step() {
    let mats = ten_tank();
    let cfg = config(8);
    let u_prev = DVector::from_element(mats.dims.n_controls, 0.2);
    let mpc = std::sync::Arc::new(CondensedMpc::new(&mats, &cfg, QpSettings::default()));
    for (intensity, fill) in [(0.5, 0.3), (2.0, 0.5), (4.0, 0.6)] {
        let model = forecast_model(&mats, 8, intensity);
        let v0 = &mats.max_volumes * fill;
        let full = control_step_with_backoff(&mats, &cfg, &v0, &u_prev, &model, &GammaSchedule::default()).unwrap();
        let mut controller =
            CcMpcController::new(mpc.clone(), FixedWindow(model), GammaSchedule::default(), "cc");
        let state = PlantState {
            volumes: v0.iter().copied().collect(),
            previous_controls: u_prev.iter().copied().collect(),
        };
        let decision = controller.decide(0, &state);
        assert_eq!(decision.gamma_used, full.gamma_used);
        assert_eq!(decision.gamma_tried, full.gamma_tried);
        if let Some(u) = full.controls {
            let got = DVector::from_vec(decision.controls);
            assert!((&got - &u).amax() <= 1e-5, "{intensity}: {got} vs {u}");
        }
    }
}
