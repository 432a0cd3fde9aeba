use nalgebra::{DMatrix, DVector};

use super::{GateKind, GateSource, NetworkTopology, TankKind, Target, UM_PER_S_M2_TO_M3_PER_S};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dimensions {
    pub n_tanks: usize,
    pub n_controls: usize,
    pub n_rain: usize,
    pub n_rows: usize,
}

/// Which physical bound an inequality row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// `0 <= V`
    VolumeMin,
    /// `V <= V_max`
    VolumeMax,
    /// `0 <= u`
    ControlMin,
    /// `u <= u_max`
    ControlMax,
    /// Retention gate: `u <= beta * V`.
    ControlAvailable,
    /// Redirection gate: `u <= q_in`.
    ControlInflow,
}

impl RowKind {
    /// Rows that only involve the tank volume.
    pub fn is_state_row(&self) -> bool {
        matches!(self, RowKind::VolumeMin | RowKind::VolumeMax)
    }

    pub fn name(&self) -> &'static str {
        match self {
            RowKind::VolumeMin => "volume_min",
            RowKind::VolumeMax => "volume_max",
            RowKind::ControlMin => "control_min",
            RowKind::ControlMax => "control_max",
            RowKind::ControlAvailable => "control_available",
            RowKind::ControlInflow => "control_inflow",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowLabel {
    pub kind: RowKind,
    /// Tank or gate id the row belongs to.
    pub element: String,
}

/// Linear control model of a network (no weirs).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub k: DVector<f64>,
    pub dims: Dimensions,
    pub delta_t: f64,
    pub rows: Vec<RowLabel>,
    pub tank_ids: Vec<String>,
    pub gate_ids: Vec<String>,
    pub catchment_ids: Vec<String>,
    pub max_volumes: DVector<f64>,
    pub treatment_capacity: f64,
}

impl NetworkMatrices {
    /// Index of the treatment-plant output in `z`.
    pub const TREATMENT: usize = 0;
    /// Index of the sea output in `z`.
    pub const SEA: usize = 1;

    pub fn n_outputs(&self) -> usize {
        2
    }

    /// One control-model step: `A V + B u + G r`.
    pub fn next_volumes(&self, v: &DVector<f64>, u: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        &self.a * v + &self.b * u + &self.g * r
    }

    pub fn outputs(&self, v: &DVector<f64>, u: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        &self.c * v + &self.d * u + &self.f * r
    }

    /// `K - (M u + P V + S r)`; negative entries are violated rows.
    pub fn row_slack(&self, v: &DVector<f64>, u: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        &self.k - (&self.m * u + &self.p * v + &self.s * r)
    }
}

/// A flow expressed linearly in (volumes, controls, rain intensities).
#[derive(Debug, Clone)]
struct LinearFlow {
    v: DVector<f64>,
    u: DVector<f64>,
    r: DVector<f64>,
}

impl LinearFlow {
    fn zero(n: usize, m: usize, l: usize) -> Self {
        Self {
            v: DVector::zeros(n),
            u: DVector::zeros(m),
            r: DVector::zeros(l),
        }
    }

    fn add_scaled(&mut self, other: &LinearFlow, scale: f64) {
        self.v.axpy(scale, &other.v, 1.0);
        self.u.axpy(scale, &other.u, 1.0);
        self.r.axpy(scale, &other.r, 1.0);
    }
}

struct Routing {
    tank_inflow: Vec<LinearFlow>,
    treatment: LinearFlow,
    sea: LinearFlow,
}

impl Routing {
    fn deliver(&mut self, target: Target, flow: &LinearFlow) {
        let slot = match target {
            Target::Tank(t) => &mut self.tank_inflow[t],
            Target::Treatment => &mut self.treatment,
            Target::Sea => &mut self.sea,
        };
        slot.add_scaled(flow, 1.0);
    }
}

/// Assemble `(A, B, G, C, D, F)` and `(M, P, S, K)` for a validated topology.
///
/// Rows are ordered per tank (`volume_min`, `volume_max`) followed by per
/// gate (`control_min`, `control_max`, coupling row).
pub fn assemble_control_model(topology: &NetworkTopology) -> NetworkMatrices {
    let n = topology.tanks.len();
    let m = topology.gates.len();
    let l = topology.rain_inputs.len();
    let dt = topology.delta_t;
    let zero = || LinearFlow::zero(n, m, l);

    let tank_outflow = |i: usize| -> LinearFlow {
        let mut f = zero();
        match topology.tanks[i].kind {
            TankKind::Virtual => f.v[i] = topology.tanks[i].beta,
            TankKind::Real => {
                let g = topology.gate_on(GateSource::Tank(i)).expect("validated: real tank has a gate");
                f.u[g] = 1.0;
            }
        }
        f
    };
    let rain_flow = |c: usize| -> LinearFlow {
        let tank = topology.tank_index(&topology.rain_inputs[c].tank).expect("validated");
        let mut f = zero();
        f.r[c] = topology.tanks[tank].catchment_area * UM_PER_S_M2_TO_M3_PER_S;
        f
    };
    let source_flow = |src: GateSource| match src {
        GateSource::Tank(i) => tank_outflow(i),
        GateSource::Rain(c) => rain_flow(c),
    };
    let target = |id: &str| topology.resolve_target(id).expect("validated target");

    let mut routing = Routing {
        tank_inflow: (0..n).map(|_| zero()).collect(),
        treatment: zero(),
        sea: zero(),
    };

    for (gi, gate) in topology.gates.iter().enumerate() {
        let src = topology.resolve_source(&gate.source).expect("validated source");
        let mut controlled = zero();
        controlled.u[gi] = 1.0;
        match gate.kind {
            GateKind::Redirection => {
                let diverted = gate.diverted_target.as_deref().expect("validated");
                routing.deliver(target(diverted), &controlled);
                let mut main = source_flow(src);
                main.add_scaled(&controlled, -1.0);
                routing.deliver(target(&gate.main_target), &main);
            }
            GateKind::Retention => routing.deliver(target(&gate.main_target), &controlled),
        }
    }
    for (i, tank) in topology.tanks.iter().enumerate() {
        if topology.gate_on(GateSource::Tank(i)).is_none() {
            let outlet = tank.outlet.as_deref().expect("validated outlet");
            routing.deliver(target(outlet), &tank_outflow(i));
        }
    }
    for c in 0..l {
        if topology.gate_on(GateSource::Rain(c)).is_none() {
            let tank = topology.tank_index(&topology.rain_inputs[c].tank).expect("validated");
            routing.deliver(Target::Tank(tank), &rain_flow(c));
        }
    }

    let mut a = DMatrix::identity(n, n);
    let mut b = DMatrix::zeros(n, m);
    let mut g = DMatrix::zeros(n, l);
    for i in 0..n {
        let mut net = routing.tank_inflow[i].clone();
        net.add_scaled(&tank_outflow(i), -1.0);
        for j in 0..n {
            a[(i, j)] += dt * net.v[j];
        }
        for j in 0..m {
            b[(i, j)] = dt * net.u[j];
        }
        for j in 0..l {
            g[(i, j)] = dt * net.r[j];
        }
    }

    let mut c = DMatrix::zeros(2, n);
    let mut d = DMatrix::zeros(2, m);
    let mut f = DMatrix::zeros(2, l);
    for (row, flow) in [&routing.treatment, &routing.sea].into_iter().enumerate() {
        c.set_row(row, &flow.v.transpose());
        d.set_row(row, &flow.u.transpose());
        f.set_row(row, &flow.r.transpose());
    }

    let n_rows = 2 * n + 3 * m;
    let mut mm = DMatrix::zeros(n_rows, m);
    let mut pp = DMatrix::zeros(n_rows, n);
    let mut ss = DMatrix::zeros(n_rows, l);
    let mut kk = DVector::zeros(n_rows);
    let mut rows = Vec::with_capacity(n_rows);
    let mut row = 0;
    for (i, tank) in topology.tanks.iter().enumerate() {
        pp[(row, i)] = -1.0;
        rows.push(RowLabel {
            kind: RowKind::VolumeMin,
            element: tank.id.clone(),
        });
        row += 1;
        pp[(row, i)] = 1.0;
        kk[row] = tank.max_volume;
        rows.push(RowLabel {
            kind: RowKind::VolumeMax,
            element: tank.id.clone(),
        });
        row += 1;
    }
    for (gi, gate) in topology.gates.iter().enumerate() {
        mm[(row, gi)] = -1.0;
        rows.push(RowLabel {
            kind: RowKind::ControlMin,
            element: gate.id.clone(),
        });
        row += 1;
        mm[(row, gi)] = 1.0;
        kk[row] = gate.max_flow;
        rows.push(RowLabel {
            kind: RowKind::ControlMax,
            element: gate.id.clone(),
        });
        row += 1;
        // u - q_in <= 0, with q_in = beta V for a real tank's retention gate.
        let src = topology.resolve_source(&gate.source).expect("validated source");
        let q_in = match (gate.kind, src) {
            (GateKind::Retention, GateSource::Tank(i)) => {
                let mut f = zero();
                f.v[i] = topology.tanks[i].beta;
                f
            }
            (_, src) => source_flow(src),
        };
        mm[(row, gi)] += 1.0;
        for j in 0..m {
            mm[(row, j)] -= q_in.u[j];
        }
        for j in 0..n {
            pp[(row, j)] = -q_in.v[j];
        }
        for j in 0..l {
            ss[(row, j)] = -q_in.r[j];
        }
        rows.push(RowLabel {
            kind: match gate.kind {
                GateKind::Retention => RowKind::ControlAvailable,
                GateKind::Redirection => RowKind::ControlInflow,
            },
            element: gate.id.clone(),
        });
        row += 1;
    }

    NetworkMatrices {
        a,
        b,
        g,
        c,
        d,
        f,
        m: mm,
        p: pp,
        s: ss,
        k: kk,
        dims: Dimensions {
            n_tanks: n,
            n_controls: m,
            n_rain: l,
            n_rows,
        },
        delta_t: dt,
        rows,
        tank_ids: topology.tanks.iter().map(|t| t.id.clone()).collect(),
        gate_ids: topology.gates.iter().map(|g| g.id.clone()).collect(),
        catchment_ids: topology.rain_inputs.iter().map(|r| r.catchment.clone()).collect(),
        max_volumes: DVector::from_vec(topology.max_volumes()),
        treatment_capacity: topology.treatment_capacity(),
    }
}
