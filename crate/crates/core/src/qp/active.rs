use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{ipm, KktReport, QpProblem, QpSettings, QpSolution, QpStatus};

const MAX_REPAIRS: usize = 40;
const CERTIFICATE_RESIDUAL: f64 = 1e-9;
const INDEPENDENCE_TOL: f64 = 1e-6;

/// Inequality-constrained QP with fixed, positive definite `H` and fixed
/// constraint matrix `C`; only `g` and `d` change between solves.
///
/// Factorizations are computed once. Each solve first tries caller-supplied
/// active sets, repairing them by adding the most violated row or dropping
/// the most negative multiplier. A candidate is accepted only when it
/// satisfies the KKT conditions to tolerance; otherwise the interior-point
/// solver runs on the assembled problem.
#[derive(Debug, Clone)]
pub struct PreparedQp {
    h: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    c: DMatrix<f64>,
    row_norm: DVector<f64>,
    /// `L⁻¹ Cᵀ` with `H = L Lᵀ`.
    e: DMatrix<f64>,
    /// `Eᵀ E`.
    gram: DMatrix<f64>,
    settings: QpSettings,
}

#[derive(Debug, Clone)]
pub struct PreparedSolve {
    pub solution: QpSolution,
    /// Rows active at the solution (empty unless optimal).
    pub active: Vec<usize>,
    /// Whether a supplied active set was accepted without running the
    /// interior-point solver.
    pub warm_started: bool,
}

impl PreparedQp {
    /// `None` when `H` is not positive definite or `C` has a zero row.
    pub fn new(h: DMatrix<f64>, c: DMatrix<f64>, settings: QpSettings) -> Option<Self> {
        assert_eq!(h.nrows(), c.ncols(), "H and C disagree on the variable count");
        let chol = h.clone().cholesky()?;
        let row_norm = DVector::from_fn(c.nrows(), |i, _| c.row(i).amax());
        if row_norm.iter().any(|&r| r == 0.0) {
            return None;
        }
        let e = chol.l().solve_lower_triangular(&c.transpose())?;
        let gram = e.tr_mul(&e);
        Some(Self {
            h,
            chol,
            c,
            row_norm,
            e,
            gram,
            settings,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_rows(&self) -> usize {
        self.c.nrows()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn settings(&self) -> &QpSettings {
        &self.settings
    }

    pub fn problem(&self, g: &DVector<f64>, d: &DVector<f64>) -> QpProblem {
        QpProblem::new(self.h.clone(), g.clone()).with_inequalities(self.c.clone(), d.clone())
    }

    fn primal_threshold(&self, d: &DVector<f64>) -> f64 {
        let dmax = d
            .iter()
            .zip(self.row_norm.iter())
            .fold(0.0f64, |m, (&di, &r)| m.max((di / r).abs()));
        self.settings.feasibility_tol * (1.0 + dmax)
    }

    fn e_col(&self, i: usize) -> &[f64] {
        let n = self.n_vars();
        &self.e.as_slice()[i * n..(i + 1) * n]
    }

    /// Solve the equality-constrained problem on `start`, repairing the set
    /// until the KKT conditions hold. `None` when no verified optimum was
    /// reached.
    ///
    /// Rows of `start` are taken in order and skipped when their normals
    /// are linearly dependent (in the `H`-metric) on those already kept.
    pub fn solve_active_set(&self, g: &DVector<f64>, d: &DVector<f64>, start: &[usize]) -> Option<(QpSolution, Vec<usize>)> {
        let n = self.n_vars();
        let m = self.n_rows();
        let l = self.chol.l();
        let hg = l.solve_lower_triangular(g)?;
        let threshold = self.primal_threshold(d);

        let mut gram = GramFactor::default();
        for &i in start {
            if i < m && gram.len() < n && !gram.rows.contains(&i) {
                gram.push(i, self);
            }
        }
        let mut last_added = None;
        for _ in 0..MAX_REPAIRS {
            let a = gram.len();
            let rhs: Vec<f64> = gram
                .rows
                .iter()
                .map(|&i| -(d[i] + dot(self.e_col(i), hg.as_slice())))
                .collect();
            let lambda = gram.solve(rhs);

            let lambda_scale = 1.0 + lambda.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
            if let Some((j, &lj)) = lambda
                .iter()
                .enumerate()
                .filter(|(j, _)| Some(gram.rows[*j]) != last_added)
                .min_by(|a, b| a.1.total_cmp(b.1))
            {
                if lj < -1e-9 * lambda_scale {
                    gram.remove(j);
                    last_added = None;
                    continue;
                }
            }
            if lambda.iter().any(|&lj| lj < -1e-9 * lambda_scale) {
                return None;
            }

            let mut t = hg.clone();
            for (j, &i) in gram.rows.iter().enumerate() {
                for (tr, er) in t.iter_mut().zip(self.e_col(i)) {
                    *tr += lambda[j] * er;
                }
            }
            let x = -l.tr_solve_lower_triangular(&t)?;

            let cx = &self.c * &x;
            let (worst, viol) = (0..m)
                .map(|i| (i, (cx[i] - d[i]) / self.row_norm[i]))
                .fold((usize::MAX, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
            if viol > threshold {
                if gram.rows.contains(&worst) || a == n || !gram.push(worst, self) {
                    return None;
                }
                last_added = Some(worst);
                continue;
            }

            let mut duals = DVector::zeros(m);
            for (j, &i) in gram.rows.iter().enumerate() {
                duals[i] = lambda[j].max(0.0);
            }
            let mut grad = &self.h * &x + g;
            grad.gemv_tr(1.0, &self.c, &duals, 1.0);
            let cost_scale = self.h.amax().max(g.amax()).max(f64::MIN_POSITIVE);
            let kkt = KktReport {
                stationarity: grad.amax() / cost_scale,
                primal_equality: 0.0,
                primal_inequality: viol.max(0.0),
                complementarity: 0.0,
            };
            if kkt.stationarity > self.settings.feasibility_tol * (1.0 + g.amax() / cost_scale) {
                return None;
            }
            let objective = 0.5 * x.dot(&(&self.h * &x)) + g.dot(&x);
            let solution = QpSolution {
                status: QpStatus::Optimal,
                x,
                objective,
                kkt,
                iterations: 0,
                eq_duals: DVector::zeros(0),
                ineq_duals: duals,
                certificate: None,
            };
            let mut active = gram.rows;
            active.sort_unstable();
            return Some((solution, active));
        }
        None
    }

    /// Try each warm set in turn, then fall back to the interior-point
    /// solver (whose result is polished through its active set when
    /// possible).
    pub fn solve(&self, g: &DVector<f64>, d: &DVector<f64>, warm_sets: &[Vec<usize>]) -> PreparedSolve {
        for set in warm_sets {
            if let Some((solution, active)) = self.solve_active_set(g, d, set) {
                return PreparedSolve {
                    solution,
                    active,
                    warm_started: true,
                };
            }
        }
        let problem = self.problem(g, d);
        let solution = ipm::solve_checked(&problem, &self.settings);
        if solution.status != QpStatus::Optimal {
            return PreparedSolve {
                solution,
                active: Vec::new(),
                warm_started: false,
            };
        }
        let mut guess = solution.active_set(&problem);
        guess.sort_by(|&a, &b| {
            let wa = solution.ineq_duals[a] * self.row_norm[a];
            let wb = solution.ineq_duals[b] * self.row_norm[b];
            wb.total_cmp(&wa)
        });
        match self.solve_active_set(g, d, &guess) {
            Some((mut polished, active)) => {
                polished.iterations = solution.iterations;
                PreparedSolve {
                    solution: polished,
                    active,
                    warm_started: false,
                }
            }
            None => PreparedSolve {
                solution,
                active: guess,
                warm_started: false,
            },
        }
    }

    /// Reuse phase-1 multipliers (over the normalized rows) as a Farkas
    /// certificate for a new right-hand side: returns the guaranteed lower
    /// bound on the largest normalized violation when it exceeds the
    /// feasibility threshold.
    pub fn certificate_bound(&self, multipliers: &DVector<f64>, d: &DVector<f64>) -> Option<f64> {
        if multipliers.len() != self.n_rows() {
            return None;
        }
        let total: f64 = multipliers.iter().sum();
        if !(total > 0.0) || multipliers.iter().any(|&y| y < 0.0) {
            return None;
        }
        let scaled = DVector::from_fn(self.n_rows(), |i, _| multipliers[i] / self.row_norm[i]);
        let residual = self.c.tr_mul(&scaled).amax() / total;
        if residual > CERTIFICATE_RESIDUAL {
            return None;
        }
        let bound = -scaled.dot(d) / total;
        (bound > self.primal_threshold(d)).then_some(bound)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cholesky factor `L Lᵀ = EᵀE` of the Gram matrix of the working rows'
/// transformed normals, updated as rows enter and leave.
#[derive(Debug, Default)]
struct GramFactor {
    rows: Vec<usize>,
    /// Row `i` of `L` holds `i + 1` entries.
    l: Vec<Vec<f64>>,
}

impl GramFactor {
    fn len(&self) -> usize {
        self.rows.len()
    }

    /// Append row `i` unless its normal is numerically dependent on the
    /// current ones.
    fn push(&mut self, i: usize, qp: &PreparedQp) -> bool {
        let norm2 = qp.gram[(i, i)];
        let mut y: Vec<f64> = self.rows.iter().map(|&r| qp.gram[(r, i)]).collect();
        for k in 0..y.len() {
            let row = &self.l[k];
            let s: f64 = (0..k).map(|j| row[j] * y[j]).sum();
            y[k] = (y[k] - s) / row[k];
        }
        let pivot2 = norm2 - dot(&y, &y);
        if !(pivot2 > INDEPENDENCE_TOL * INDEPENDENCE_TOL * norm2) {
            return false;
        }
        y.push(pivot2.sqrt());
        self.l.push(y);
        self.rows.push(i);
        true
    }

    fn remove(&mut self, j: usize) {
        self.rows.remove(j);
        self.l.remove(j);
        let mut x: Vec<f64> = self.l[j..].iter_mut().map(|row| row.remove(j)).collect();
        // Rank-one update of the trailing block with the removed column.
        for k in 0..x.len() {
            let lkk = self.l[j + k][j + k];
            let r = lkk.hypot(x[k]);
            let c = r / lkk;
            let s = x[k] / lkk;
            self.l[j + k][j + k] = r;
            for i in k + 1..x.len() {
                let lik = (self.l[j + i][j + k] + s * x[i]) / c;
                x[i] = c * x[i] - s * lik;
                self.l[j + i][j + k] = lik;
            }
        }
    }

    fn solve(&self, mut b: Vec<f64>) -> Vec<f64> {
        let a = b.len();
        for k in 0..a {
            let row = &self.l[k];
            let s: f64 = (0..k).map(|j| row[j] * b[j]).sum();
            b[k] = (b[k] - s) / row[k];
        }
        for k in (0..a).rev() {
            let s: f64 = (k + 1..a).map(|i| self.l[i][k] * b[i]).sum();
            b[k] = (b[k] - s) / self.l[k][k];
        }
        b
    }
}
