use nalgebra::{DMatrix, DVector};

use super::{Feasibility, InfeasibilityCertificate, KktReport, QpProblem, QpSettings, QpSolution, QpStatus};

const FRACTION_TO_BOUNDARY: f64 = 0.995;
const KKT_REGULARIZATION: f64 = 1e-10;
const LP_REGULARIZATION: f64 = 1e-9;

/// Row- and cost-normalized copy of a problem with zero rows removed.
struct Normalized {
    h: DMatrix<f64>,
    g: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DMatrix<f64>,
    d: DVector<f64>,
    cost_scale: f64,
    eq_rows: Vec<usize>,
    eq_scale: Vec<f64>,
    in_rows: Vec<usize>,
    in_scale: Vec<f64>,
}

enum Presolve {
    Ready(Normalized),
    /// A constraint row with no variables is violated.
    Violated { ineq: Option<usize>, amount: f64 },
}

fn normalize(p: &QpProblem, tol: f64) -> Presolve {
    let n = p.n_vars();
    let cost_scale = {
        let s = p.h.amax().max(p.g.amax());
        if s > 0.0 {
            s
        } else {
            1.0
        }
    };
    let mut eq_rows = Vec::new();
    let mut eq_scale = Vec::new();
    for i in 0..p.n_eq() {
        let norm = p.a_eq.row(i).amax();
        if norm > 0.0 {
            eq_rows.push(i);
            eq_scale.push(norm);
        } else if p.b_eq[i].abs() > tol * (1.0 + p.b_eq[i].abs()) {
            return Presolve::Violated {
                ineq: None,
                amount: p.b_eq[i].abs(),
            };
        }
    }
    let mut in_rows = Vec::new();
    let mut in_scale = Vec::new();
    for i in 0..p.n_in() {
        let norm = p.a_in.row(i).amax();
        if norm > 0.0 {
            in_rows.push(i);
            in_scale.push(norm);
        } else if p.b_in[i] < -tol * (1.0 + p.b_in[i].abs()) {
            return Presolve::Violated {
                ineq: Some(i),
                amount: -p.b_in[i],
            };
        }
    }
    let a = DMatrix::from_fn(eq_rows.len(), n, |r, j| p.a_eq[(eq_rows[r], j)] / eq_scale[r]);
    let b = DVector::from_fn(eq_rows.len(), |r, _| p.b_eq[eq_rows[r]] / eq_scale[r]);
    let c = DMatrix::from_fn(in_rows.len(), n, |r, j| p.a_in[(in_rows[r], j)] / in_scale[r]);
    let d = DVector::from_fn(in_rows.len(), |r, _| p.b_in[in_rows[r]] / in_scale[r]);
    Presolve::Ready(Normalized {
        h: &p.h / cost_scale,
        g: &p.g / cost_scale,
        a,
        b,
        c,
        d,
        cost_scale,
        eq_rows,
        eq_scale,
        in_rows,
        in_scale,
    })
}

struct Iterate {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    iterations: usize,
    converged: bool,
    kkt: KktReport,
}

struct Tolerances {
    primal: f64,
    dual: f64,
    gap: f64,
}

/// Newton system factorization for one iteration.
enum Factor {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

fn factor(h: &DMatrix<f64>, c: &DMatrix<f64>, w: &DVector<f64>, a: &DMatrix<f64>, reg: f64) -> Option<Factor> {
    let n = h.nrows();
    let mut k = h.clone();
    if c.nrows() > 0 {
        let mut cw = c.clone();
        for (i, mut row) in cw.row_iter_mut().enumerate() {
            row *= w[i].sqrt();
        }
        k.gemm_tr(1.0, &cw, &cw, 1.0);
    }
    let p = a.nrows();
    let floor = 1e-14 * k.diagonal().amax().max(1.0);
    let mut delta = reg;
    for attempt in 0..10 {
        if attempt > 0 {
            delta = delta.max(floor) * 100.0;
            if delta > 1e-2 * k.diagonal().amax().max(1.0) {
                break;
            }
        }
        if p == 0 {
            let mut kr = k.clone();
            for i in 0..n {
                kr[(i, i)] += delta;
            }
            if let Some(ch) = kr.cholesky() {
                return Some(Factor::Cholesky(ch));
            }
        } else {
            let mut kkt = DMatrix::zeros(n + p, n + p);
            kkt.view_mut((0, 0), (n, n)).copy_from(&k);
            for i in 0..n {
                kkt[(i, i)] += delta;
            }
            kkt.view_mut((n, 0), (p, n)).copy_from(a);
            kkt.view_mut((0, n), (n, p)).copy_from(&a.transpose());
            for i in 0..p {
                kkt[(n + i, n + i)] = -delta;
            }
            let lu = kkt.lu();
            if lu.is_invertible() {
                return Some(Factor::Lu(lu));
            }
        }
    }
    None
}

fn solve_newton(f: &Factor, n: usize, rhs_x: &DVector<f64>, rhs_y: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    match f {
        Factor::Cholesky(ch) => Some((ch.solve(rhs_x), DVector::zeros(0))),
        Factor::Lu(lu) => {
            let p = rhs_y.len();
            let mut rhs = DVector::zeros(n + p);
            rhs.rows_mut(0, n).copy_from(rhs_x);
            rhs.rows_mut(n, p).copy_from(rhs_y);
            let sol = lu.solve(&rhs)?;
            Some((sol.rows(0, n).into_owned(), sol.rows(n, p).into_owned()))
        }
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(1.0f64, f64::min)
}

fn residuals(
    nz: &Normalized,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    s: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let mut rd = &nz.h * x + &nz.g;
    if nz.a.nrows() > 0 {
        rd.gemv_tr(1.0, &nz.a, y, 1.0);
    }
    if nz.c.nrows() > 0 {
        rd.gemv_tr(1.0, &nz.c, z, 1.0);
    }
    let rp = &nz.a * x - &nz.b;
    let ri = &nz.c * x + s - &nz.d;
    (rd, rp, ri)
}

/// Mehrotra predictor-corrector on the normalized problem. With
/// `detect_stall`, gives up early when primal infeasibility stops shrinking.
fn interior_point(nz: &Normalized, settings: &QpSettings, reg: f64, detect_stall: bool) -> Iterate {
    let n = nz.h.nrows();
    let m = nz.c.nrows();
    let p = nz.a.nrows();
    let tol = Tolerances {
        primal: settings.feasibility_tol * (1.0 + nz.b.amax().max(nz.d.amax())),
        dual: settings.feasibility_tol * (1.0 + nz.g.amax()),
        gap: settings.optimality_tol,
    };

    if m == 0 {
        return equality_only(nz, &tol);
    }

    // Starting point from the regularized least-squares system with unit
    // weights, then shifted into the interior.
    let ones = DVector::from_element(m, 1.0);
    let (mut x, mut y) = match factor(&nz.h, &nz.c, &ones, &nz.a, reg.max(1e-8)) {
        Some(f) => {
            let mut rhs = -&nz.g;
            if m > 0 {
                rhs.gemv_tr(1.0, &nz.c, &nz.d, 1.0);
            }
            solve_newton(&f, n, &rhs, &nz.b).unwrap_or((DVector::zeros(n), DVector::zeros(p)))
        }
        None => (DVector::zeros(n), DVector::zeros(p)),
    };
    if y.len() != p {
        y = DVector::zeros(p);
    }
    let mut s = &nz.d - &nz.c * &x;
    let mut z = DVector::from_element(m, 1.0);
    if m > 0 {
        let ds = (-1.5 * s.min()).max(0.0);
        s.add_scalar_mut(ds);
        let sz = s.dot(&z);
        let shift_s = 0.5 * sz / z.sum();
        let shift_z = 0.5 * sz / s.sum().max(f64::MIN_POSITIVE);
        s.add_scalar_mut(shift_s);
        z.add_scalar_mut(shift_z);
        for v in s.iter_mut() {
            *v = v.max(1e-8);
        }
    }

    let mut primal_history: Vec<f64> = Vec::new();
    let mut small_steps = 0;
    // Infeasibility-to-complementarity ratio of the start; later iterates
    // must not let complementarity fall much faster than infeasibility.
    let mut ratio0 = None;
    let mut kkt = KktReport::default();
    for iter in 0..=settings.max_iterations {
        let (rd, rp, ri) = residuals(nz, &x, &y, &z, &s);
        let mu = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };
        let primal = rp.amax().max(ri.amax());
        kkt = KktReport {
            stationarity: rd.amax(),
            primal_equality: rp.amax(),
            primal_inequality: ri.iter().fold(0.0f64, |a, &v| a.max(v.abs())),
            complementarity: mu,
        };
        if primal <= tol.primal && kkt.stationarity <= tol.dual && mu <= tol.gap {
            return Iterate {
                x,
                y,
                z,
                iterations: iter,
                converged: true,
                kkt,
            }
            .polished(nz, &s, &tol);
        }
        if iter == settings.max_iterations {
            break;
        }
        if !(primal.is_finite() && mu.is_finite()) || z.amax() > 1e14 || x.amax() > 1e15 {
            break;
        }
        primal_history.push(primal);
        if detect_stall && iter >= 12 {
            let past = primal_history[iter - 6];
            if primal > tol.primal && primal > 0.5 * past && mu < 1e-3 * primal {
                break;
            }
        }

        let w = DVector::from_fn(m, |i, _| z[i] / s[i]);
        let Some(f) = factor(&nz.h, &nz.c, &w, &nz.a, reg) else {
            break;
        };
        let direction = |r_sz: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            // Δz = W(CΔx + r_i) − S⁻¹ r_sz
            let t = DVector::from_fn(m, |i, _| w[i] * ri[i] - r_sz[i] / s[i]);
            let mut rhs = -&rd;
            if m > 0 {
                rhs.gemv_tr(-1.0, &nz.c, &t, 1.0);
            }
            let (dx, dy) = solve_newton(&f, n, &rhs, &(-&rp))?;
            let cdx = &nz.c * &dx;
            let dz = DVector::from_fn(m, |i, _| w[i] * (cdx[i] + ri[i]) - r_sz[i] / s[i]);
            let ds = DVector::from_fn(m, |i, _| -(r_sz[i] + s[i] * dz[i]) / z[i]);
            let dy = if p > 0 { dy } else { DVector::zeros(0) };
            Some((dx, dy, dz, ds))
        };

        let r_aff = s.component_mul(&z);
        let Some((_, _, dz_a, ds_a)) = direction(&r_aff) else {
            break;
        };
        let step_len = |ds: &DVector<f64>, dz: &DVector<f64>| {
            (FRACTION_TO_BOUNDARY * max_step(&s, ds).min(max_step(&z, dz))).min(1.0)
        };
        let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = (&s + &ds_a * alpha_aff).dot(&(&z + &dz_a * alpha_aff)) / m as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
        let r_corr = DVector::from_fn(m, |i, _| s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu);
        let Some(mut d) = direction(&r_corr) else {
            break;
        };
        let mut alpha = step_len(&d.3, &d.2);
        let mu_new = (&s + &d.3 * alpha).dot(&(&z + &d.2 * alpha)) / m as f64;
        if mu_new > (1.0 - 0.01 * alpha) * mu {
            // Second-order correction backfired; take a plain centered step.
            let sigma = sigma.max(0.1);
            let r_center = DVector::from_fn(m, |i, _| s[i] * z[i] - sigma * mu);
            if let Some(centered) = direction(&r_center) {
                d = centered;
                alpha = step_len(&d.3, &d.2);
                for _ in 0..30 {
                    let mu_try = (&s + &d.3 * alpha).dot(&(&z + &d.2 * alpha)) / m as f64;
                    if mu_try <= (1.0 - 0.01 * alpha) * mu {
                        break;
                    }
                    alpha *= 0.5;
                }
            }
        }
        let infeasibility = primal.max(kkt.stationarity);
        let xi = *ratio0.get_or_insert(if mu > 0.0 { (infeasibility / mu).max(1.0) } else { 1.0 });
        let mu_new = (&s + &d.3 * alpha).dot(&(&z + &d.2 * alpha)) / m as f64;
        if (primal > tol.primal || kkt.stationarity > tol.dual) && mu_new * xi < 1e-2 * (1.0 - alpha) * infeasibility {
            let r_center = DVector::from_fn(m, |i, _| s[i] * z[i] - 0.5 * mu);
            if let Some(centered) = direction(&r_center) {
                d = centered;
                alpha = step_len(&d.3, &d.2);
            }
        }
        let (dx, dy, dz, ds) = d;
        if alpha < 1e-10 {
            small_steps += 1;
            if small_steps >= 3 {
                break;
            }
        } else {
            small_steps = 0;
        }
        x.axpy(alpha, &dx, 1.0);
        if p > 0 {
            y.axpy(alpha, &dy, 1.0);
        }
        s.axpy(alpha, &ds, 1.0);
        z.axpy(alpha, &dz, 1.0);
        for v in s.iter_mut() {
            *v = v.max(f64::MIN_POSITIVE);
        }
        for v in z.iter_mut() {
            *v = v.max(f64::MIN_POSITIVE);
        }
    }
    let iterations = primal_history.len();
    Iterate {
        x,
        y,
        z,
        iterations,
        converged: false,
        kkt,
    }
}

impl Iterate {
    /// Replace a converged interior point by the exact solution on its
    /// active set when that solution verifies.
    fn polished(self, nz: &Normalized, s: &DVector<f64>, tol: &Tolerances) -> Iterate {
        let by_dual: Vec<usize> = (0..s.len()).filter(|&i| self.z[i] > s[i]).collect();
        let by_slack: Vec<usize> = (0..s.len()).filter(|&i| s[i] <= tol.primal).collect();
        for guess in [by_dual, by_slack] {
            if let Some(better) = active_set_solution(nz, &guess, tol) {
                return Iterate {
                    iterations: self.iterations,
                    ..better
                };
            }
        }
        self
    }
}

enum Candidate {
    Verified(Iterate),
    AddRow(usize),
    DropRow(usize),
    Singular,
}

/// Exact solution on `active`, repaired by adding the most violated row or
/// dropping the most negative multiplier until it verifies.
fn active_set_solution(nz: &Normalized, active: &[usize], tol: &Tolerances) -> Option<Iterate> {
    let mut working = active.to_vec();
    for _ in 0..(2 * nz.c.nrows() + 4) {
        match candidate(nz, &working, tol) {
            Candidate::Verified(it) => return Some(it),
            Candidate::AddRow(i) if !working.contains(&i) => working.push(i),
            Candidate::DropRow(q) => {
                working.remove(q);
            }
            _ => return None,
        }
    }
    None
}

fn candidate(nz: &Normalized, active: &[usize], tol: &Tolerances) -> Candidate {
    let n = nz.h.nrows();
    let p = nz.a.nrows();
    let k = p + active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&nz.h);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&nz.g));
    for r in 0..p {
        for j in 0..n {
            kkt[(n + r, j)] = nz.a[(r, j)];
            kkt[(j, n + r)] = nz.a[(r, j)];
        }
        rhs[n + r] = nz.b[r];
    }
    for (q, &i) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + p + q, j)] = nz.c[(i, j)];
            kkt[(j, n + p + q)] = nz.c[(i, j)];
        }
        rhs[n + p + q] = nz.d[i];
    }
    let Some(sol) = kkt.lu().solve(&rhs) else {
        return Candidate::Singular;
    };
    if !sol.iter().all(|v| v.is_finite()) {
        return Candidate::Singular;
    }
    let x = sol.rows(0, n).into_owned();
    let y = sol.rows(n, p).into_owned();
    let lambda = sol.rows(n + p, active.len()).into_owned();
    let zscale = 1.0 + lambda.amax();
    if let Some((q, &lq)) = lambda.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)) {
        if lq < -1e-9 * zscale {
            return Candidate::DropRow(q);
        }
    }
    let slack = &nz.d - &nz.c * &x;
    if let Some((i, &si)) = slack.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)) {
        if -si > tol.primal {
            return Candidate::AddRow(i);
        }
    }
    let mut z = DVector::zeros(nz.c.nrows());
    for (q, &i) in active.iter().enumerate() {
        z[i] = lambda[q].max(0.0);
    }
    let s = slack.map(|v| v.max(0.0));
    let (rd, rp, _) = residuals(nz, &x, &y, &z, &s);
    if rp.amax() > tol.primal || rd.amax() > tol.dual {
        return Candidate::Singular;
    }
    let primal_in = slack.iter().fold(0.0f64, |acc, &v| acc.max(-v));
    let complementarity = z.iter().zip(s.iter()).map(|(a, b)| a * b).fold(0.0f64, f64::max);
    Candidate::Verified(Iterate {
        x,
        y,
        z,
        iterations: 0,
        converged: true,
        kkt: KktReport {
            stationarity: rd.amax(),
            primal_equality: rp.amax(),
            primal_inequality: primal_in,
            complementarity,
        },
    })
}

/// Direct KKT solve with two rounds of iterative refinement.
fn equality_only(nz: &Normalized, tol: &Tolerances) -> Iterate {
    let n = nz.h.nrows();
    let p = nz.a.nrows();
    let empty = DVector::zeros(0);
    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(p);
    let mut kkt = KktReport::default();
    if let Some(f) = factor(&nz.h, &nz.c, &empty, &nz.a, 0.0) {
        for _ in 0..3 {
            let (rd, rp, _) = residuals(nz, &x, &y, &empty, &empty);
            let Some((dx, dy)) = solve_newton(&f, n, &(-rd), &(-rp)) else { break };
            x += dx;
            if p > 0 {
                y += dy;
            }
        }
    }
    let (rd, rp, _) = residuals(nz, &x, &y, &empty, &empty);
    kkt.stationarity = rd.amax();
    kkt.primal_equality = rp.amax();
    Iterate {
        converged: kkt.stationarity <= tol.dual && kkt.primal_equality <= tol.primal,
        x,
        y,
        z: DVector::zeros(0),
        iterations: 1,
        kkt,
    }
}

fn expand_duals(nz: &Normalized, it: &Iterate, n_eq: usize, n_in: usize) -> (DVector<f64>, DVector<f64>) {
    let mut y = DVector::zeros(n_eq);
    for (r, &i) in nz.eq_rows.iter().enumerate() {
        y[i] = it.y[r] * nz.cost_scale / nz.eq_scale[r];
    }
    let mut z = DVector::zeros(n_in);
    for (r, &i) in nz.in_rows.iter().enumerate() {
        z[i] = it.z[r] * nz.cost_scale / nz.in_scale[r];
    }
    (y, z)
}

pub(super) fn solve_checked(problem: &QpProblem, settings: &QpSettings) -> QpSolution {
    let n = problem.n_vars();
    let nz = match normalize(problem, settings.feasibility_tol) {
        Presolve::Ready(nz) => nz,
        Presolve::Violated { ineq, amount, .. } => {
            let mut multipliers = DVector::zeros(problem.n_in());
            if let Some(i) = ineq {
                multipliers[i] = 1.0;
            }
            return QpSolution {
                status: QpStatus::Infeasible,
                x: DVector::zeros(n),
                objective: 0.0,
                kkt: KktReport::default(),
                iterations: 0,
                eq_duals: DVector::zeros(problem.n_eq()),
                ineq_duals: DVector::zeros(problem.n_in()),
                certificate: Some(InfeasibilityCertificate {
                    violation: amount,
                    multipliers,
                }),
            };
        }
    };

    let mut it = interior_point(&nz, settings, KKT_REGULARIZATION, true);
    let mut extra = 0;
    let mut certificate = None;
    if !it.converged {
        match phase_one_normalized(&nz, problem.n_in(), settings) {
            Feasibility::Infeasible(cert) => certificate = Some(cert),
            Feasibility::Feasible { .. } | Feasibility::Undetermined => {
                extra = it.iterations;
                let retry = interior_point(&nz, settings, KKT_REGULARIZATION, false);
                if retry.converged || retry.kkt.stationarity < it.kkt.stationarity {
                    it = retry;
                }
            }
        }
    }
    let (eq_duals, ineq_duals) = expand_duals(&nz, &it, problem.n_eq(), problem.n_in());
    let status = if it.converged {
        QpStatus::Optimal
    } else if certificate.is_some() {
        QpStatus::Infeasible
    } else {
        QpStatus::MaxIterations
    };
    QpSolution {
        status,
        objective: problem.objective(&it.x),
        x: it.x,
        kkt: it.kkt,
        iterations: it.iterations + extra,
        eq_duals,
        ineq_duals,
        certificate,
    }
}

pub(super) fn phase_one(problem: &QpProblem, settings: &QpSettings) -> Feasibility {
    match normalize(problem, settings.feasibility_tol) {
        Presolve::Ready(nz) => phase_one_normalized(&nz, problem.n_in(), settings),
        Presolve::Violated { ineq, amount, .. } => {
            let mut multipliers = DVector::zeros(problem.n_in());
            if let Some(i) = ineq {
                multipliers[i] = 1.0;
            }
            Feasibility::Infeasible(InfeasibilityCertificate {
                violation: amount,
                multipliers,
            })
        }
    }
}

/// `min t  s.t.  A x = b,  C x − t ≤ d,  t ≥ 0` on the normalized rows.
fn phase_one_normalized(nz: &Normalized, n_in: usize, settings: &QpSettings) -> Feasibility {
    let n = nz.h.nrows();
    let m = nz.c.nrows();
    let p = nz.a.nrows();
    let threshold = settings.feasibility_tol * (1.0 + nz.b.amax().max(nz.d.amax()));
    let mut c = DMatrix::zeros(m + 1, n + 1);
    c.view_mut((0, 0), (m, n)).copy_from(&nz.c);
    for i in 0..m {
        c[(i, n)] = -1.0;
    }
    c[(m, n)] = -1.0;
    let mut d = DVector::zeros(m + 1);
    d.rows_mut(0, m).copy_from(&nz.d);
    let mut a = DMatrix::zeros(p, n + 1);
    a.view_mut((0, 0), (p, n)).copy_from(&nz.a);
    let mut g = DVector::zeros(n + 1);
    g[n] = 1.0;
    let lp = Normalized {
        h: DMatrix::zeros(n + 1, n + 1),
        g,
        a,
        b: nz.b.clone(),
        c,
        d,
        cost_scale: 1.0,
        eq_rows: (0..p).collect(),
        eq_scale: vec![1.0; p],
        in_rows: (0..=m).collect(),
        in_scale: vec![1.0; m + 1],
    };
    let it = interior_point(&lp, settings, LP_REGULARIZATION, false);
    let t = it.x[n];
    let x = it.x.rows(0, n).into_owned();
    let violation = (&nz.c * &x - &nz.d).iter().fold(0.0f64, |acc, &v| acc.max(v));
    let eq_violation = (&nz.a * &x - &nz.b).amax();
    if violation.max(eq_violation) <= threshold {
        return Feasibility::Feasible { point: x, violation };
    }
    if !it.converged {
        return Feasibility::Undetermined;
    }
    if t > threshold {
        let mut multipliers = DVector::zeros(n_in);
        for (r, &i) in nz.in_rows.iter().enumerate() {
            multipliers[i] = it.z[r];
        }
        return Feasibility::Infeasible(InfeasibilityCertificate { violation: t, multipliers });
    }
    Feasibility::Undetermined
}
