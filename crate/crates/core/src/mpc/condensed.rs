use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::{horizon_rows, stage_cost, HorizonRow, MpcConfig};
use crate::network::NetworkMatrices;
use crate::qp::{self, PreparedQp, QpProblem, QpSettings, QpStatus};
use crate::simulator::StepStatus;

/// Controls-only form of the horizon program: volumes and outputs are
/// eliminated through the dynamics, leaving `U = (u_0, …, u_{N−1})`.
///
/// Every horizon row becomes `a_h·U ≤ K_h − v_h·V_0 − c_h·R − offset_h`
/// with `R` the stacked rain vector. Rows with `a_h = 0` are checked
/// directly; the rest go to a [`PreparedQp`] built once.
#[derive(Debug, Clone)]
pub struct CondensedMpc {
    mats: NetworkMatrices,
    config: MpcConfig,
    structure: HorizonStructure,
    constant: Vec<usize>,
    varying: Vec<usize>,
    position: HashMap<HorizonRow, usize>,
    prepared: Option<PreparedQp>,
    h: DMatrix<f64>,
    g_v0: DMatrix<f64>,
    g_rain: DMatrix<f64>,
    g_const: DVector<f64>,
    z_u: DMatrix<f64>,
    z_v0: DMatrix<f64>,
    z_rain: DMatrix<f64>,
    settings: QpSettings,
}

/// Active rows and infeasibility multipliers carried between steps.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    active: Vec<HorizonRow>,
    certificate: Vec<(HorizonRow, f64)>,
}

impl WarmStart {
    pub fn clear(&mut self) {
        self.active.clear();
        self.certificate.clear();
    }
}

#[derive(Debug, Clone)]
pub struct CondensedSolve {
    pub status: StepStatus,
    /// Planned controls per step; empty unless feasible.
    pub plan: Vec<DVector<f64>>,
    /// Horizon cost (constants included) of the plan.
    pub cost: f64,
    pub warm_started: bool,
}

impl CondensedMpc {
    pub fn new(mats: &NetworkMatrices, config: &MpcConfig, settings: QpSettings) -> Self {
        let horizon = config.horizon;
        let (n, m, l) = (mats.dims.n_tanks, mats.dims.n_controls, mats.dims.n_rain);
        let no = mats.n_outputs();
        let nu = horizon * m;
        let nr = horizon * l;

        let mut apow = vec![DMatrix::identity(n, n)];
        for s in 1..=horizon {
            apow.push(&mats.a * &apow[s - 1]);
        }

        let mut z_u = DMatrix::zeros(no * horizon, nu);
        let mut z_v0 = DMatrix::zeros(no * horizon, n);
        let mut z_rain = DMatrix::zeros(no * horizon, nr);
        for k in 0..horizon {
            z_v0.view_mut((no * k, 0), (no, n)).copy_from(&(&mats.c * &apow[k]));
            for i in 0..k {
                let ca = &mats.c * &apow[k - 1 - i];
                z_u.view_mut((no * k, m * i), (no, m)).copy_from(&(&ca * &mats.b));
                z_rain.view_mut((no * k, l * i), (no, l)).copy_from(&(&ca * &mats.g));
            }
            z_u.view_mut((no * k, m * k), (no, m)).copy_from(&mats.d);
            z_rain.view_mut((no * k, l * k), (no, l)).copy_from(&mats.f);
        }

        let structure = HorizonStructure::new(mats, horizon);
        let rows = structure.rows.clone();
        let lifted_u = &structure.control;

        let (varying, constant): (Vec<usize>, Vec<usize>) =
            (0..rows.len()).partition(|&h| lifted_u.row(h).amax() > 0.0);
        let position = varying.iter().enumerate().map(|(i, &h)| (rows[h], i)).collect();

        let qbar = DVector::from_fn(no * horizon, |i, _| config.q_weights[i % no]);
        let qz = DMatrix::from_fn(no * horizon, nu, |i, j| qbar[i] * z_u[(i, j)]);
        let mut h = z_u.tr_mul(&qz) * 2.0;
        let two_r = 2.0 * config.r_weight;
        for i in 0..nu {
            h[(i, i)] += 2.0 * two_r;
            if i + m < nu {
                h[(i, i + m)] -= two_r;
                h[(i + m, i)] -= two_r;
            }
        }
        // The last block has no successor difference.
        for i in nu - m..nu {
            h[(i, i)] -= two_r;
        }
        let h = (&h + h.transpose()) * 0.5;
        let g_v0 = qz.tr_mul(&z_v0) * 2.0;
        let g_rain = qz.tr_mul(&z_rain) * 2.0;
        let z_ref = config.reference(mats);
        let zref = DVector::from_fn(no * horizon, |i, _| z_ref[i % no]);
        let g_const = qz.tr_mul(&zref) * -2.0;

        let c = DMatrix::from_fn(varying.len(), nu, |i, j| lifted_u[(varying[i], j)]);
        let prepared = if nu > 0 { PreparedQp::new(h.clone(), c, settings) } else { None };

        Self {
            mats: mats.clone(),
            config: *config,
            structure,
            constant,
            varying,
            position,
            prepared,
            h,
            g_v0,
            g_rain,
            g_const,
            z_u,
            z_v0,
            z_rain,
            settings,
        }
    }

    pub fn matrices(&self) -> &NetworkMatrices {
        &self.mats
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn structure(&self) -> &HorizonStructure {
        &self.structure
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }

    fn stack(&self, rain: &[DVector<f64>]) -> DVector<f64> {
        stack_rain(rain)
    }

    pub fn gradient(&self, v0: &DVector<f64>, u_prev: &DVector<f64>, rain: &[DVector<f64>]) -> DVector<f64> {
        let mut g = &self.g_v0 * v0 + &self.g_rain * self.stack(rain) + &self.g_const;
        for j in 0..u_prev.len() {
            g[j] -= 2.0 * self.config.r_weight * u_prev[j];
        }
        g
    }

    /// Stacked outputs `(z_0, …, z_{N−1})` for a control plan.
    pub fn predict_outputs(&self, v0: &DVector<f64>, rain: &[DVector<f64>], plan: &DVector<f64>) -> DVector<f64> {
        &self.z_u * plan + &self.z_v0 * v0 + &self.z_rain * self.stack(rain)
    }

    /// Horizon cost of a stacked control plan.
    pub fn plan_cost(&self, v0: &DVector<f64>, u_prev: &DVector<f64>, rain: &[DVector<f64>], plan: &DVector<f64>) -> f64 {
        let m = self.mats.dims.n_controls;
        let no = self.mats.n_outputs();
        let z = self.predict_outputs(v0, rain, plan);
        let z_ref = self.config.reference(&self.mats);
        (0..self.horizon())
            .map(|k| {
                let du: Vec<f64> = (0..m)
                    .map(|j| {
                        let prev = if k == 0 { u_prev[j] } else { plan[m * (k - 1) + j] };
                        plan[m * k + j] - prev
                    })
                    .collect();
                stage_cost(&self.config, &z.as_slice()[no * k..no * (k + 1)], &z_ref, &du)
            })
            .sum()
    }

    fn warm_sets(&self, warm: &WarmStart) -> Vec<Vec<usize>> {
        let horizon = self.horizon();
        let shifted = self.map_rows(warm.active.iter().flat_map(|r| shift(r, horizon)));
        let unshifted = self.map_rows(warm.active.iter().copied());
        let mut sets = vec![unshifted];
        if sets[0] != shifted {
            sets.push(shifted);
        }
        sets
    }

    fn map_rows(&self, rows: impl Iterator<Item = HorizonRow>) -> Vec<usize> {
        let mut set: Vec<usize> = rows.filter_map(|r| self.position.get(&r).copied()).collect();
        set.sort_unstable();
        set.dedup();
        set
    }

    fn certificate_hit(&self, prepared: &PreparedQp, warm: &WarmStart, d: &DVector<f64>) -> bool {
        if warm.certificate.is_empty() {
            return false;
        }
        let candidates: [Vec<(HorizonRow, f64)>; 2] = [
            warm.certificate
                .iter()
                .filter(|(r, _)| r.step > 0)
                .map(|&(r, y)| (HorizonRow { step: r.step - 1, row: r.row }, y))
                .collect(),
            warm.certificate.clone(),
        ];
        candidates.iter().any(|cert| {
            let mut y = DVector::zeros(self.varying.len());
            for (r, v) in cert {
                if let Some(&i) = self.position.get(r) {
                    y[i] = *v;
                }
            }
            prepared.certificate_bound(&y, d).is_some()
        })
    }

    /// Solve for the control plan around rain means `rain`, reducing each
    /// row bound by `offsets` when given.
    pub fn solve(
        &self,
        v0: &DVector<f64>,
        u_prev: &DVector<f64>,
        rain: &[DVector<f64>],
        offsets: Option<&[f64]>,
        warm: &mut WarmStart,
    ) -> CondensedSolve {
        let mut d_all = self.structure.bounds(v0, rain);
        if let Some(off) = offsets {
            for h in 0..d_all.len() {
                d_all[h] -= off[h];
            }
        }
        let infeasible = CondensedSolve {
            status: StepStatus::Infeasible,
            plan: Vec::new(),
            cost: f64::INFINITY,
            warm_started: false,
        };
        let threshold = self.settings.feasibility_tol * (1.0 + d_all.amax());
        if self.constant.iter().any(|&h| d_all[h] < -threshold) {
            return infeasible;
        }
        let m = self.mats.dims.n_controls;
        let horizon = self.horizon();
        if m == 0 {
            let plan = DVector::zeros(0);
            return CondensedSolve {
                status: StepStatus::Feasible,
                plan: vec![DVector::zeros(0); horizon],
                cost: self.plan_cost(v0, u_prev, rain, &plan),
                warm_started: false,
            };
        }
        let g = self.gradient(v0, u_prev, rain);
        let d = DVector::from_fn(self.varying.len(), |i, _| d_all[self.varying[i]]);

        let (status, x, active, cert, warm_started) = match &self.prepared {
            Some(prepared) => {
                if self.certificate_hit(prepared, warm, &d) {
                    return CondensedSolve {
                        warm_started: true,
                        ..infeasible
                    };
                }
                let out = prepared.solve(&g, &d, &self.warm_sets(warm));
                let cert = out.solution.certificate.map(|c| c.multipliers);
                (out.solution.status, out.solution.x, out.active, cert, out.warm_started)
            }
            None => {
                let c = DMatrix::from_fn(self.varying.len(), self.h.ncols(), |i, j| {
                    self.structure.control[(self.varying[i], j)]
                });
                let problem = QpProblem::new(self.h.clone(), g).with_inequalities(c, d);
                match qp::solve(&problem, &self.settings) {
                    Ok(sol) => {
                        let active = if sol.is_optimal() { sol.active_set(&problem) } else { Vec::new() };
                        let cert = sol.certificate.map(|c| c.multipliers);
                        (sol.status, sol.x, active, cert, false)
                    }
                    Err(_) => (QpStatus::MaxIterations, DVector::zeros(0), Vec::new(), None, false),
                }
            }
        };

        match status {
            QpStatus::Optimal => {
                warm.active = active.iter().map(|&i| self.structure.rows[self.varying[i]]).collect();
                warm.certificate.clear();
                let plan = (0..horizon).map(|k| x.rows(m * k, m).into_owned()).collect();
                CondensedSolve {
                    status: StepStatus::Feasible,
                    plan,
                    cost: self.plan_cost(v0, u_prev, rain, &x),
                    warm_started,
                }
            }
            QpStatus::Infeasible => {
                if let Some(y) = cert {
                    warm.certificate = y
                        .iter()
                        .enumerate()
                        .filter(|(_, &v)| v > 0.0)
                        .map(|(i, &v)| (self.structure.rows[self.varying[i]], v))
                        .collect();
                }
                infeasible
            }
            QpStatus::MaxIterations => CondensedSolve {
                status: StepStatus::MaxIterations,
                ..infeasible
            },
        }
    }
}

/// Row `(k, j)` moves to `(k − 1, j)`; rows of the last step also seed the
/// last step again.
fn shift(r: &HorizonRow, horizon: usize) -> impl Iterator<Item = HorizonRow> {
    let back = (r.step > 0).then(|| HorizonRow { step: r.step - 1, row: r.row });
    let repeat = (r.step + 1 == horizon).then_some(*r);
    back.into_iter().chain(repeat)
}


/// Stack per-step vectors into one.
pub fn stack_rain(rain: &[DVector<f64>]) -> DVector<f64> {
    let l = rain.first().map_or(0, |r| r.len());
    DVector::from_fn(rain.len() * l, |i, _| rain[i / l][i % l])
}

/// Every horizon row written over the free quantities of the horizon:
/// `control·U + v0·V_0 + rain·R ≤ bound`, where state rows act on the
/// volumes at the end of their step and other rows on those at its start.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonStructure {
    pub rows: Vec<HorizonRow>,
    pub control: DMatrix<f64>,
    pub v0: DMatrix<f64>,
    pub rain: DMatrix<f64>,
    pub bound: DVector<f64>,
    /// Nonzero entries `(row, coefficient)` of each column of `rain`.
    pub rain_pattern: Vec<Vec<(usize, f64)>>,
}

impl HorizonStructure {
    pub fn new(mats: &NetworkMatrices, horizon: usize) -> Self {
        let (n, m, l) = (mats.dims.n_tanks, mats.dims.n_controls, mats.dims.n_rain);
        let mut apow = vec![DMatrix::identity(n, n)];
        for s in 1..=horizon {
            apow.push(&mats.a * &apow[s - 1]);
        }
        let pa: Vec<Vec<DMatrix<f64>>> = (0..mats.dims.n_rows)
            .map(|j| {
                let p = mats.p.rows(j, 1).into_owned();
                apow.iter().map(|a| &p * a).collect()
            })
            .collect();
        let pab: Vec<Vec<DMatrix<f64>>> =
            pa.iter().map(|v| v.iter().map(|r| r * &mats.b).collect()).collect();
        let pag: Vec<Vec<DMatrix<f64>>> =
            pa.iter().map(|v| v.iter().map(|r| r * &mats.g).collect()).collect();

        let rows = horizon_rows(mats, horizon);
        let mut control = DMatrix::zeros(rows.len(), horizon * m);
        let mut v0 = DMatrix::zeros(rows.len(), n);
        let mut rain = DMatrix::zeros(rows.len(), horizon * l);
        let mut bound = DVector::zeros(rows.len());
        for (h, hr) in rows.iter().enumerate() {
            let j = hr.row;
            let state = mats.rows[j].kind.is_state_row();
            let t = if state { hr.step + 1 } else { hr.step };
            v0.row_mut(h).copy_from(&pa[j][t]);
            for i in 0..t {
                control.view_mut((h, m * i), (1, m)).copy_from(&pab[j][t - 1 - i]);
                rain.view_mut((h, l * i), (1, l)).copy_from(&pag[j][t - 1 - i]);
            }
            if !state {
                let k = hr.step;
                for c in 0..m {
                    control[(h, m * k + c)] += mats.m[(j, c)];
                }
                for c in 0..l {
                    rain[(h, l * k + c)] += mats.s[(j, c)];
                }
            }
            bound[h] = mats.k[j];
        }
        let rain_pattern = rain
            .column_iter()
            .map(|col| col.iter().enumerate().filter(|(_, &c)| c != 0.0).map(|(h, &c)| (h, c)).collect())
            .collect();
        Self {
            rows,
            control,
            v0,
            rain,
            bound,
            rain_pattern,
        }
    }

    /// Bound on `control·U` of every row for the given initial volumes and
    /// rain.
    pub fn bounds(&self, v0: &DVector<f64>, rain: &[DVector<f64>]) -> DVector<f64> {
        let mut d = &self.v0 * v0;
        d.gemv(1.0, &self.rain, &stack_rain(rain), 1.0);
        &self.bound - d
    }
}
