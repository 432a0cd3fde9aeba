//! Dense convex QP solver:
//!
//! ```text
//! minimize    ½ xᵀ H x + gᵀ x
//! subject to  A_eq x = b_eq
//!             A_in x ≤ b_in
//! ```
//!
//! A primal-dual interior-point method with Mehrotra predictor-corrector does
//! the work; infeasibility is confirmed by a phase-1 program that minimizes the
//! largest (row-normalized) constraint violation.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

mod active;
mod ipm;

pub use active::PreparedQp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("problem data contains NaN or infinite values in {0}")]
    NonFinite(&'static str),
    #[error("H is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("H is not positive semidefinite")]
    NotPsd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    /// Optional names for diagnostics; empty or one per variable.
    pub var_names: Vec<String>,
}

impl QpProblem {
    /// Unconstrained problem.
    pub fn new(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            var_names: Vec::new(),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn n_vars(&self) -> usize {
        self.g.len()
    }

    pub fn n_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn n_in(&self) -> usize {
        self.b_in.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Largest violation of any constraint at `x`, in the problem's units.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let eq = (&self.a_eq * x - &self.b_eq).amax();
        let ineq = (&self.a_in * x - &self.b_in).iter().fold(0.0f64, |m, &v| m.max(v));
        eq.max(ineq)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n_vars();
        let dims = [
            ("H", self.h.nrows(), n),
            ("H columns", self.h.ncols(), n),
            ("A_eq columns", self.a_eq.ncols(), n),
            ("A_eq rows", self.a_eq.nrows(), self.b_eq.len()),
            ("A_in columns", self.a_in.ncols(), n),
            ("A_in rows", self.a_in.nrows(), self.b_in.len()),
        ];
        for (what, got, expected) in dims {
            if got != expected {
                return Err(QpError::Dimension(format!("{what}: expected {expected}, got {got}")));
            }
        }
        if !self.var_names.is_empty() && self.var_names.len() != n {
            return Err(QpError::Dimension(format!(
                "var_names: expected {n}, got {}",
                self.var_names.len()
            )));
        }
        let finite = [
            ("H", self.h.iter().all(|v| v.is_finite())),
            ("g", self.g.iter().all(|v| v.is_finite())),
            ("A_eq", self.a_eq.iter().all(|v| v.is_finite())),
            ("b_eq", self.b_eq.iter().all(|v| v.is_finite())),
            ("A_in", self.a_in.iter().all(|v| v.is_finite())),
            ("b_in", self.b_in.iter().all(|v| v.is_finite())),
        ];
        if let Some((what, _)) = finite.iter().find(|(_, ok)| !ok) {
            return Err(QpError::NonFinite(what));
        }
        let scale = self.h.amax().max(1.0);
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(QpError::NotSymmetric(asym));
        }
        Ok(())
    }

    /// Dense text dump: one `# name rows cols` header per block followed by
    /// row-major CSV lines.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        if !self.var_names.is_empty() {
            writeln!(w, "# var_names 1 {}", self.var_names.len())?;
            writeln!(w, "{}", self.var_names.join(","))?;
        }
        dump_block(&mut w, "H", &self.h)?;
        dump_block(&mut w, "g", &DMatrix::from_column_slice(1, self.g.len(), self.g.as_slice()))?;
        dump_block(&mut w, "A_eq", &self.a_eq)?;
        dump_block(&mut w, "b_eq", &DMatrix::from_column_slice(1, self.b_eq.len(), self.b_eq.as_slice()))?;
        dump_block(&mut w, "A_in", &self.a_in)?;
        dump_block(&mut w, "b_in", &DMatrix::from_column_slice(1, self.b_in.len(), self.b_in.as_slice()))
    }
}

fn dump_block<W: Write>(w: &mut W, name: &str, m: &DMatrix<f64>) -> io::Result<()> {
    writeln!(w, "# {name} {} {}", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    /// Relative primal/dual residual tolerance.
    pub feasibility_tol: f64,
    /// Average complementarity gap tolerance.
    pub optimality_tol: f64,
    pub max_iterations: usize,
    /// Smallest eigenvalue tolerated for H (relative to `max(1, |H|)`).
    pub psd_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-7,
            optimality_tol: 1e-8,
            max_iterations: 100,
            psd_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIterations => "max_iterations",
        }
    }
}

/// Residuals measured on the row- and cost-normalized problem.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_equality: f64,
    pub primal_inequality: f64,
    pub complementarity: f64,
}

/// Phase-1 evidence: `violation` is the smallest achievable largest violation
/// over the row-normalized inequalities; `multipliers` (one per inequality,
/// nonnegative, summing to at most one) certify it.
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityCertificate {
    pub violation: f64,
    pub multipliers: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: DVector<f64>,
    pub objective: f64,
    pub kkt: KktReport,
    pub iterations: usize,
    pub eq_duals: DVector<f64>,
    pub ineq_duals: DVector<f64>,
    pub certificate: Option<InfeasibilityCertificate>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    /// Inequality rows treated as active at the solution.
    pub fn active_set(&self, problem: &QpProblem) -> Vec<usize> {
        let slack = &problem.b_in - &problem.a_in * &self.x;
        (0..problem.n_in())
            .filter(|&i| {
                let norm = problem.a_in.row(i).amax().max(f64::MIN_POSITIVE);
                self.ineq_duals[i] > slack[i].max(0.0) / norm
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible { point: DVector<f64>, violation: f64 },
    Infeasible(InfeasibilityCertificate),
    Undetermined,
}

/// Solve a convex QP.
pub fn solve(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    problem.validate()?;
    check_psd(&problem.h, settings.psd_tol)?;
    Ok(ipm::solve_checked(problem, settings))
}

/// Phase-1: decide whether the constraint set is nonempty.
pub fn check_feasible(problem: &QpProblem, settings: &QpSettings) -> Result<Feasibility, QpError> {
    problem.validate()?;
    check_psd(&problem.h, settings.psd_tol)?;
    Ok(ipm::phase_one(problem, settings))
}

/// Reject H whose smallest eigenvalue is below `-tol * max(1, |H|max)`.
pub fn check_psd(h: &DMatrix<f64>, tol: f64) -> Result<(), QpError> {
    let n = h.nrows();
    if n == 0 {
        return Ok(());
    }
    let shift = tol * h.amax().max(1.0);
    let shifted = h + DMatrix::identity(n, n) * shift;
    if shifted.cholesky().is_some() {
        Ok(())
    } else {
        Err(QpError::NotPsd)
    }
}

#[cfg(test)]
mod tests;
