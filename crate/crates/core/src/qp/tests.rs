use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Brute force: solve the equality KKT system for every subset of
/// inequality rows and keep the best primal-feasible candidate.
fn enumeration_oracle(p: &QpProblem) -> Option<DVector<f64>> {
    let n = p.n_vars();
    let m = p.n_in();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = p.n_eq() + rows.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
        rhs.rows_mut(0, n).copy_from(&(-&p.g));
        for r in 0..p.n_eq() {
            for j in 0..n {
                kkt[(n + r, j)] = p.a_eq[(r, j)];
                kkt[(j, n + r)] = p.a_eq[(r, j)];
            }
            rhs[n + r] = p.b_eq[r];
        }
        for (q, &i) in rows.iter().enumerate() {
            let r = p.n_eq() + q;
            for j in 0..n {
                kkt[(n + r, j)] = p.a_in[(i, j)];
                kkt[(j, n + r)] = p.a_in[(i, j)];
            }
            rhs[n + r] = p.b_in[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        if !sol.iter().all(|v| v.is_finite()) {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        if p.max_violation(&x) > 1e-9 {
            continue;
        }
        let f = p.objective(&x);
        if best.as_ref().map_or(true, |(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    best.map(|(_, x)| x)
}

fn random_qp(rng: &mut ChaCha8Rng, n: usize, m_in: usize, m_eq: usize, infeasible: bool) -> QpProblem {
    let mut uni = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let f = DMatrix::from_fn(n, n, |_, _| uni(-1.0, 1.0));
    let h = f.tr_mul(&f) + DMatrix::identity(n, n) * 0.1;
    let h = (&h + h.transpose()) * 0.5;
    let g = DVector::from_fn(n, |_, _| uni(-3.0, 3.0));
    let x0 = DVector::from_fn(n, |_, _| uni(-1.0, 1.0));
    let mut a_in = DMatrix::from_fn(m_in, n, |_, _| uni(-1.0, 1.0));
    let mut b_in = &a_in * &x0 + DVector::from_fn(m_in, |_, _| uni(0.0, 0.5));
    if infeasible && m_in >= 2 {
        // Rows 0 and 1 demand a·x ≤ c and a·x ≥ c + gap.
        let row = a_in.row(0).into_owned();
        a_in.set_row(1, &(-&row));
        b_in[1] = -(b_in[0] + uni(0.1, 1.0));
    }
    let a_eq = DMatrix::from_fn(m_eq, n, |_, _| uni(-1.0, 1.0));
    let b_eq = &a_eq * &x0;
    QpProblem::new(h, g).with_equalities(a_eq, b_eq).with_inequalities(a_in, b_in)
}

#[test]
fn active_lower_bound() {
    let p = QpProblem::new(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1))
        .with_inequalities(DMatrix::from_element(1, 1, -1.0), DVector::from_element(1, -1.0));
    let sol = solve(&p, &QpSettings::default()).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-7);
    assert_relative_eq!(sol.objective, 1.0, epsilon = 1e-7);
}

#[test]
fn symmetric_equality() {
    let p = QpProblem::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))
        .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_element(1, 2.0));
    let sol = solve(&p, &QpSettings::default()).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
    assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-10);
}

#[test]
fn six_variable_against_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = random_qp(&mut rng, 6, 3, 0, false);
    let expected = enumeration_oracle(&p).unwrap();
    let sol = solve(&p, &QpSettings::default()).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!((&sol.x - &expected).amax() < 1e-6, "{} vs {}", sol.x, expected);
}

#[test]
fn box_feasibility() {
    let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
    let feasible = QpProblem::new(DMatrix::zeros(1, 1), DVector::zeros(1))
        .with_inequalities(a.clone(), DVector::from_row_slice(&[1.0, 0.0]));
    assert!(matches!(
        check_feasible(&feasible, &QpSettings::default()).unwrap(),
        Feasibility::Feasible { .. }
    ));
    let infeasible = QpProblem::new(DMatrix::zeros(1, 1), DVector::zeros(1))
        .with_inequalities(a, DVector::from_row_slice(&[0.0, -1.0]));
    match check_feasible(&infeasible, &QpSettings::default()).unwrap() {
        Feasibility::Infeasible(cert) => {
            assert_relative_eq!(cert.violation, 0.5, epsilon = 1e-6);
            assert!(cert.multipliers.iter().all(|&y| y >= 0.0));
        }
        other => panic!("expected infeasible, got {other:?}"),
    }
    let sol = solve(&infeasible, &QpSettings::default()).unwrap();
    assert_eq!(sol.status, QpStatus::Infeasible);
    assert!(sol.certificate.unwrap().violation > 0.0);
}

#[test]
fn constant_row_presolve() {
    let p = QpProblem::new(DMatrix::identity(1, 1), DVector::zeros(1))
        .with_inequalities(DMatrix::zeros(1, 1), DVector::from_element(1, -2.0));
    assert_eq!(solve(&p, &QpSettings::default()).unwrap().status, QpStatus::Infeasible);
}

#[test]
fn rejects_bad_input() {
    let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    assert_eq!(
        solve(&QpProblem::new(h, DVector::zeros(2)), &QpSettings::default()),
        Err(QpError::NotPsd)
    );
    let mut g = DVector::zeros(2);
    g[1] = f64::NAN;
    assert!(matches!(
        solve(&QpProblem::new(DMatrix::identity(2, 2), g), &QpSettings::default()),
        Err(QpError::NonFinite("g"))
    ));
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    assert!(matches!(
        solve(&QpProblem::new(asym, DVector::zeros(2)), &QpSettings::default()),
        Err(QpError::NotSymmetric(_))
    ));
    let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2))
        .with_inequalities(DMatrix::zeros(1, 3), DVector::zeros(1));
    assert!(matches!(solve(&p, &QpSettings::default()), Err(QpError::Dimension(_))));
}

#[test]
fn tiny_negative_eigenvalue_tolerated() {
    let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
    let p = QpProblem::new(h, DVector::from_row_slice(&[-1.0, 0.0])).with_inequalities(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -1.0]),
        DVector::from_row_slice(&[1.0, 1.0]),
    );
    let sol = solve(&p, &QpSettings::default()).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-7);
}

#[test]
fn dump_has_block_headers() {
    let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2))
        .with_inequalities(DMatrix::from_row_slice(1, 2, &[1.0, 2.0]), DVector::from_element(1, 3.0));
    let mut buf = Vec::new();
    p.write_dump(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.contains("# H 2 2\n1e0,0e0\n0e0,1e0\n"));
    assert!(text.contains("# A_in 1 2\n1e0,2e0\n"));
    assert!(text.contains("# A_eq 0 2\n"));
}

#[test]
fn prepared_matches_interior_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let p = random_qp(&mut rng, 8, 8, 0, false);
        let prepared = PreparedQp::new(p.h.clone(), p.a_in.clone(), QpSettings::default()).unwrap();
        let cold = prepared.solve(&p.g, &p.b_in, &[]);
        let reference = solve(&p, &QpSettings::default()).unwrap();
        assert_eq!(cold.solution.status, QpStatus::Optimal);
        assert!((&cold.solution.x - &reference.x).amax() < 1e-6);
        // The returned active set reproduces the optimum without iterating.
        let warm = prepared.solve(&p.g, &p.b_in, &[cold.active.clone()]);
        assert!(warm.warm_started);
        assert!((&warm.solution.x - &cold.solution.x).amax() < 1e-9);
        // A wrong guess is repaired or rejected, never accepted unverified.
        let wrong: Vec<usize> = (0..p.n_in()).filter(|i| !cold.active.contains(i)).take(3).collect();
        let guessed = prepared.solve(&p.g, &p.b_in, &[wrong]);
        assert!((&guessed.solution.x - &reference.x).amax() < 1e-6);
    }
}

#[test]
fn certificate_reuse() {
    let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0]);
    let prepared = PreparedQp::new(DMatrix::identity(2, 2), a.clone(), QpSettings::default()).unwrap();
    let d = DVector::from_row_slice(&[0.0, -1.0, 5.0]);
    let first = prepared.solve(&DVector::zeros(2), &d, &[]);
    assert_eq!(first.solution.status, QpStatus::Infeasible);
    let cert = first.solution.certificate.unwrap();
    let wider = DVector::from_row_slice(&[0.0, -3.0, 1.0]);
    let bound = prepared.certificate_bound(&cert.multipliers, &wider).unwrap();
    assert_relative_eq!(bound, 1.5, epsilon = 1e-6);
    let feasible = DVector::from_row_slice(&[2.0, -1.0, 1.0]);
    assert!(prepared.certificate_bound(&cert.multipliers, &feasible).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(std::env::var("QP_CASES").ok().and_then(|v| v.parse().ok()).unwrap_or(48)))]

    #[test]
    fn matches_enumeration(seed in any::<u64>(), n in 2usize..=10, m in 1usize..=8, infeasible in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_qp(&mut rng, n, m, 0, infeasible && m >= 2);
        let sol = solve(&p, &QpSettings::default()).unwrap();
        match enumeration_oracle(&p) {
            Some(x) => {
                prop_assert_eq!(sol.status, QpStatus::Optimal);
                prop_assert!((&sol.x - &x).amax() < 1e-6);
            }
            None => prop_assert_eq!(sol.status, QpStatus::Infeasible),
        }
    }

    #[test]
    fn with_equalities_matches_enumeration(seed in any::<u64>(), n in 3usize..=8, m in 1usize..=6, p_eq in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_qp(&mut rng, n, m, p_eq, false);
        let sol = solve(&p, &QpSettings::default()).unwrap();
        let x = enumeration_oracle(&p).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!((&sol.x - &x).amax() < 1e-6);
    }

    #[test]
    fn cost_scaling_leaves_argmin(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_qp(&mut rng, 6, 5, 1, false);
        let mut q = p.clone();
        q.h *= scale;
        q.g *= scale;
        let a = solve(&p, &QpSettings::default()).unwrap();
        let b = solve(&q, &QpSettings::default()).unwrap();
        prop_assert!((&a.x - &b.x).amax() < 1e-8);
    }

    #[test]
    fn equality_only_matches_kkt(seed in any::<u64>(), n in 2usize..=10, p_eq in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_qp(&mut rng, n, 0, p_eq.min(n - 1), false);
        let k = p.n_eq();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
        kkt.view_mut((n, 0), (k, n)).copy_from(&p.a_eq);
        kkt.view_mut((0, n), (n, k)).copy_from(&p.a_eq.transpose());
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&p.g));
        rhs.rows_mut(n, k).copy_from(&p.b_eq);
        let direct = kkt.lu().solve(&rhs).unwrap();
        let sol = solve(&p, &QpSettings::default()).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!((&sol.x - &direct.rows(0, n)).amax() < 1e-10);
    }

    #[test]
    fn reported_objective_consistent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_qp(&mut rng, 7, 6, 1, false);
        let sol = solve(&p, &QpSettings::default()).unwrap();
        let recomputed = p.objective(&sol.x);
        prop_assert!((sol.objective - recomputed).abs() <= 1e-8 * recomputed.abs().max(1.0));
    }
}



