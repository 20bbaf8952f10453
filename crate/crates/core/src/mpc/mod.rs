//! Constrained linear MPC that tracks the compliance reference.
//!
//! The QP is condensed over the input increments of the control horizon plus
//! two output slacks (speed and lateral position). Output bounds are soft,
//! input and input-rate bounds are hard.

pub mod model;
pub mod solver;

use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};

use crate::arbiter::ResolvedPlan;
use crate::error::{Error, Result};
use crate::model::VehicleState;
use crate::reference::ReferenceSource;
use crate::strategy::{Interval, Variable};

pub use model::{linearize, Input, V_EPS, LinearModel, Output, State, VehicleParams, NU, NX, NY};
pub use solver::{solve_qp, Qp, QpSolution, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub np: usize,
    pub nc: usize,
    pub dt: f64,
    pub w_v: f64,
    pub w_phi: f64,
    pub w_y: f64,
    pub w_f: f64,
    pub w_delta: f64,
    pub u_min: [f64; 2],
    pub u_max: [f64; 2],
    pub du_min: [f64; 2],
    pub du_max: [f64; 2],
    /// Quadratic slack weight.
    pub slack_penalty: f64,
    /// Linear slack weight; slack stays at zero unless a bound cannot be met.
    pub slack_linear_penalty: f64,
    /// Output bounds are tightened by this much on install.
    pub output_margin: f64,
    pub solver: SolverOptions,
}

impl MpcConfig {
    pub fn for_vehicle(p: &VehicleParams, dt: f64) -> Self {
        Self {
            np: 30,
            nc: 5,
            dt,
            w_v: 1.0,
            w_phi: 10.0,
            w_y: 5.0,
            w_f: 1e-6,
            w_delta: 10.0,
            u_min: [-4.0 * p.mass, -0.1],
            u_max: [4.0 * p.mass, 0.1],
            du_min: [-20.0 * p.mass * dt, -0.01],
            du_max: [20.0 * p.mass * dt, 0.01],
            slack_penalty: 1e5,
            slack_linear_penalty: 1e4,
            output_margin: 1e-3,
            solver: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nc < 1 || self.np < self.nc {
            return Err(Error::Config(format!("horizons must satisfy Np >= Nc >= 1 (Np={}, Nc={})", self.np, self.nc)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        let w = [self.w_v, self.w_phi, self.w_y, self.w_f, self.w_delta];
        if w.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::NotConvex("weights must be non-negative".into()));
        }
        if self.w_v + self.w_phi + self.w_y <= 0.0 {
            return Err(Error::Config("at least one output weight must be positive".into()));
        }
        for i in 0..2 {
            if !(self.u_min[i] <= self.u_max[i]) {
                return Err(Error::Config(format!("input bounds are empty for input {i}")));
            }
            if !(self.du_min[i] <= 0.0 && 0.0 <= self.du_max[i]) {
                return Err(Error::Config(format!("rate bounds must contain zero for input {i}")));
            }
        }
        if !(self.slack_penalty > 0.0) || !(self.slack_linear_penalty >= 0.0) {
            return Err(Error::Config("slack penalties must be positive".into()));
        }
        Ok(())
    }
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self::for_vehicle(&VehicleParams::default(), 0.05)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub model: LinearModel,
    /// Desired outputs at steps `1..=Np`.
    pub y_des: Vec<Output>,
    pub v_bounds: Option<Interval>,
    pub y_bounds: Option<Interval>,
    /// Internal scaling of the inputs (force in mass units).
    pub input_scale: [f64; 2],
}

/// What a constraint row of the condensed QP stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    SpeedLower(usize),
    SpeedUpper(usize),
    LateralLower(usize),
    LateralUpper(usize),
    InputLower { input: usize, step: usize },
    InputUpper { input: usize, step: usize },
    RateLower { input: usize, step: usize },
    RateUpper { input: usize, step: usize },
    SlackNonNegative(usize),
}

impl RowKind {
    pub fn is_output(&self) -> bool {
        matches!(self, RowKind::SpeedLower(_) | RowKind::SpeedUpper(_) | RowKind::LateralLower(_) | RowKind::LateralUpper(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondensedQp {
    pub qp: Qp,
    pub rows: Vec<RowKind>,
    /// Objective constant so that `qp.objective(z) + constant` is the MPC cost.
    pub constant: f64,
    pub nc: usize,
    pub input_scale: [f64; 2],
    pub u_prev: Input,
    /// Free response and input sensitivity of the state at steps `1..=Np`.
    pub free: Vec<State>,
    pub sens: Vec<DMatrix<f64>>,
}

impl CondensedQp {
    pub fn n_du(&self) -> usize {
        NU * self.nc
    }

    /// Physical input increments encoded by `z`.
    pub fn increments(&self, z: &[f64]) -> Vec<Input> {
        (0..self.nc)
            .map(|i| Input::new(z[2 * i] * self.input_scale[0], z[2 * i + 1] * self.input_scale[1]))
            .collect()
    }

    /// Predicted states at steps `1..=Np` for `z`.
    pub fn states(&self, z: &[f64]) -> Vec<State> {
        let zd = DVector::from_column_slice(&z[..self.n_du()]);
        self.free.iter().zip(&self.sens).map(|(f, s)| f + State::from_iterator((s * &zd).iter().copied())).collect()
    }
}

fn tighten(b: Interval, margin: f64) -> Interval {
    if b.hi - b.lo > 2.0 * margin {
        Interval::new(b.lo + margin, b.hi - margin)
    } else {
        b
    }
}

/// Condenses the MPC problem into a dense QP in `[du (scaled), s_v, s_y]`.
pub fn build_qp(problem: &MpcProblem, cfg: &MpcConfig, x0: &State, u_prev: &Input) -> Result<CondensedQp> {
    cfg.validate()?;
    let (np, nc) = (cfg.np, cfg.nc);
    if problem.y_des.len() != np {
        return Err(Error::Config(format!("expected {np} desired outputs, got {}", problem.y_des.len())));
    }
    let m = &problem.model;
    let scale = problem.input_scale;
    let n_du = NU * nc;
    let nz = n_du + 2;
    let u_prev = Input::new(u_prev[0].clamp(cfg.u_min[0], cfg.u_max[0]), u_prev[1].clamp(cfg.u_min[1], cfg.u_max[1]));

    // Free response and sensitivities.
    let mut free = Vec::with_capacity(np);
    let mut sens = Vec::with_capacity(np);
    let mut x = *x0;
    let mut phi = DMatrix::<f64>::zeros(NX, n_du);
    let a = DMatrix::from_column_slice(NX, NX, m.a.as_slice());
    let b = DMatrix::from_column_slice(NX, NU, m.b.as_slice());
    let bs = &b * DMatrix::from_diagonal(&DVector::from_column_slice(&scale));
    for k in 0..np {
        x = m.a * x + m.b * u_prev;
        let mut next = &a * &phi;
        for i in 0..=k.min(nc - 1) {
            let mut block = next.view_mut((0, NU * i), (NX, NU));
            block += &bs;
        }
        phi = next;
        free.push(x);
        sens.push(phi.clone());
    }

    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&[cfg.w_v, cfg.w_phi, cfg.w_y]));
    let c = DMatrix::from_column_slice(NY, NX, m.c.as_slice());
    let mut h = DMatrix::<f64>::zeros(nz, nz);
    let mut g = DVector::<f64>::zeros(nz);
    let mut constant = 0.0;
    for k in 0..np {
        let gk = &c * &sens[k];
        let e = m.c * free[k] - problem.y_des[k];
        let e = DVector::from_column_slice(e.as_slice());
        let qg = &q * &gk;
        let mut hv = h.view_mut((0, 0), (n_du, n_du));
        hv += gk.transpose() * &qg * 2.0;
        let mut gv = g.rows_mut(0, n_du);
        gv += qg.transpose() * &e * 2.0;
        constant += e.dot(&(&q * &e));
    }
    let r = [cfg.w_f * scale[0] * scale[0], cfg.w_delta * scale[1] * scale[1]];
    let diag_max = (0..n_du).map(|i| h[(i, i)]).fold(0.0f64, f64::max).max(1.0);
    for i in 0..nc {
        for j in 0..NU {
            // tiny ridge keeps the Hessian definite when an input is unobservable
            h[(NU * i + j, NU * i + j)] += 2.0 * r[j] + 1e-11 * diag_max;
        }
    }
    for s in 0..2 {
        h[(n_du + s, n_du + s)] = 2.0 * cfg.slack_penalty;
        g[n_du + s] = cfg.slack_linear_penalty;
    }

    // Constraint rows.
    let mut rows_a: Vec<Vec<f64>> = Vec::new();
    let mut rows_b: Vec<f64> = Vec::new();
    let mut kinds = Vec::new();
    let mut push = |coef: Vec<f64>, rhs: f64, kind: RowKind| {
        rows_a.push(coef);
        rows_b.push(rhs);
        kinds.push(kind);
    };

    let outputs = [
        (problem.v_bounds, m.c_s.row(0).into_owned(), 0usize),
        (problem.y_bounds, m.c_s.row(1).into_owned(), 1usize),
    ];
    for (bounds, sel, ch) in outputs {
        let Some(bounds) = bounds else { continue };
        let bounds = tighten(bounds, cfg.output_margin);
        let sel = DMatrix::from_row_slice(1, NX, sel.as_slice());
        for k in 0..np {
            let row = (&sel * &sens[k]).row(0).iter().copied().collect::<Vec<_>>();
            let fr = (&sel * DVector::from_column_slice(free[k].as_slice()))[0];
            let slack = n_du + ch;
            // lower: row z + s >= lo - free
            let mut lo = row.clone();
            lo.resize(nz, 0.0);
            lo[slack] = 1.0;
            // upper: -row z + s >= free - hi
            let mut hi: Vec<f64> = row.iter().map(|v| -v).collect();
            hi.resize(nz, 0.0);
            hi[slack] = 1.0;
            let (kl, ku) = if ch == 0 {
                (RowKind::SpeedLower(k + 1), RowKind::SpeedUpper(k + 1))
            } else {
                (RowKind::LateralLower(k + 1), RowKind::LateralUpper(k + 1))
            };
            push(lo, bounds.lo - fr, kl);
            push(hi, fr - bounds.hi, ku);
        }
    }
    for step in 0..nc {
        for input in 0..NU {
            // u_step = u_prev + sum_{i<=step} s * z_i
            let mut row = vec![0.0; nz];
            for i in 0..=step {
                row[NU * i + input] = scale[input];
            }
            let neg: Vec<f64> = row.iter().map(|v| -v).collect();
            push(row, cfg.u_min[input] - u_prev[input], RowKind::InputLower { input, step });
            push(neg, u_prev[input] - cfg.u_max[input], RowKind::InputUpper { input, step });

            let mut rate = vec![0.0; nz];
            rate[NU * step + input] = 1.0;
            let neg: Vec<f64> = rate.iter().map(|v| -v).collect();
            push(rate, cfg.du_min[input] / scale[input], RowKind::RateLower { input, step });
            push(neg, -cfg.du_max[input] / scale[input], RowKind::RateUpper { input, step });
        }
    }
    for s in 0..2 {
        let mut row = vec![0.0; nz];
        row[n_du + s] = 1.0;
        push(row, 0.0, RowKind::SlackNonNegative(s));
    }

    let m_rows = rows_b.len();
    let a_mat = DMatrix::from_fn(m_rows, nz, |i, j| rows_a[i][j]);
    Ok(CondensedQp {
        qp: Qp { h, g, a: a_mat, b: DVector::from_vec(rows_b) },
        rows: kinds,
        constant,
        nc,
        input_scale: scale,
        u_prev,
        free,
        sens,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub objective: f64,
    pub iterations: usize,
    pub active: Vec<RowKind>,
    /// Speed and lateral slack.
    pub slack: [f64; 2],
    /// The solve failed and the previous input was held.
    pub fallback: bool,
    pub error: Option<String>,
}

impl Diagnostics {
    pub fn slack_active(&self) -> bool {
        self.slack.iter().any(|s| *s > 1e-6)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub u: Input,
    pub du: Input,
    pub predicted: Vec<State>,
    pub diagnostics: Diagnostics,
}

/// Solves a condensed QP and applies the first move. Hard input bounds are
/// enforced exactly on the returned move.
pub fn solve(cqp: &CondensedQp, cfg: &MpcConfig) -> Result<MpcSolution> {
    let sol = solve_qp(&cqp.qp, &cfg.solver)?;
    let du = cqp.increments(&sol.z)[0];
    let mut u = Input::zeros();
    let mut du_exact = Input::zeros();
    for i in 0..NU {
        let d = du[i].clamp(cfg.du_min[i], cfg.du_max[i]);
        let mut ui = (cqp.u_prev[i] + d).clamp(cfg.u_min[i], cfg.u_max[i]);
        // rounding in the sum must not push the increment past its bound
        while ui - cqp.u_prev[i] > cfg.du_max[i] {
            ui = ui.next_down();
        }
        while ui - cqp.u_prev[i] < cfg.du_min[i] {
            ui = ui.next_up();
        }
        u[i] = ui;
        du_exact[i] = ui - cqp.u_prev[i];
    }
    let n_du = cqp.n_du();
    Ok(MpcSolution {
        u,
        du: du_exact,
        predicted: cqp.states(&sol.z),
        diagnostics: Diagnostics {
            objective: sol.objective + cqp.constant,
            iterations: sol.iterations,
            active: sol.active.iter().map(|&i| cqp.rows[i]).collect(),
            slack: [sol.z[n_du].max(0.0), sol.z[n_du + 1].max(0.0)],
            fallback: false,
            error: None,
        },
    })
}

pub fn state_of(v: &VehicleState) -> State {
    State::from_column_slice(&[v.vx, v.vy, v.yaw_rate, v.yaw, v.x, v.y])
}

pub fn vehicle_of(template: &VehicleState, x: &State) -> VehicleState {
    VehicleState { vx: x[0], vy: x[1], yaw_rate: x[2], yaw: x[3], x: x[4], y: x[5], ..*template }
}

/// Assembles the tracking problem from the resolved plan and the initial
/// reference at time `t`.
pub fn build_problem(
    plan: &ResolvedPlan,
    initial_ref: &dyn ReferenceSource,
    t: f64,
    ego: &VehicleState,
    cfg: &MpcConfig,
    params: &VehicleParams,
) -> MpcProblem {
    let model = linearize(params, ego.vx, cfg.dt);
    let v_ref = plan.reference(Variable::Speed);
    let y_ref = plan.reference(Variable::LateralPosition);
    let y_des = (1..=cfg.np)
        .map(|k| {
            let r = initial_ref.sample(t + k as f64 * cfg.dt);
            Output::new(v_ref.unwrap_or(r.vx), 0.0, y_ref.unwrap_or(r.y))
        })
        .collect();
    MpcProblem {
        model,
        y_des,
        v_bounds: plan.constraint(Variable::Speed),
        y_bounds: plan.constraint(Variable::LateralPosition),
        input_scale: [params.mass, 1.0],
    }
}

/// One receding-horizon step.
pub fn mpc_step(
    plan: &ResolvedPlan,
    initial_ref: &dyn ReferenceSource,
    t: f64,
    ego: &VehicleState,
    u_prev: &Input,
    cfg: &MpcConfig,
    params: &VehicleParams,
) -> Result<MpcSolution> {
    params.validate()?;
    let problem = build_problem(plan, initial_ref, t, ego, cfg, params);
    let cqp = build_qp(&problem, cfg, &state_of(ego), u_prev)?;
    solve(&cqp, cfg)
}

/// Like [`mpc_step`] but holds the previous input when the solve fails.
pub fn mpc_step_or_hold(
    plan: &ResolvedPlan,
    initial_ref: &dyn ReferenceSource,
    t: f64,
    ego: &VehicleState,
    u_prev: &Input,
    cfg: &MpcConfig,
    params: &VehicleParams,
) -> MpcSolution {
    match mpc_step(plan, initial_ref, t, ego, u_prev, cfg, params) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("MPC solve failed at t={t:.3}: {e}; holding previous input");
            let model = linearize(params, ego.vx, cfg.dt);
            let u = Input::new(u_prev[0].clamp(cfg.u_min[0], cfg.u_max[0]), u_prev[1].clamp(cfg.u_min[1], cfg.u_max[1]));
            let mut x = state_of(ego);
            let predicted = (0..cfg.np)
                .map(|_| {
                    x = model.step(&x, &u);
                    x
                })
                .collect();
            MpcSolution {
                u,
                du: u - u_prev,
                predicted,
                diagnostics: Diagnostics { fallback: true, error: Some(e.to_string()), ..Default::default() },
            }
        }
    }
}

/// Direct evaluation of the MPC cost for physical increments, by simulation.
pub fn simulated_cost(problem: &MpcProblem, cfg: &MpcConfig, x0: &State, u_prev: &Input, du: &[Input], slack: [f64; 2]) -> f64 {
    let q = SMatrix::<f64, 3, 3>::from_diagonal(&nalgebra::Vector3::new(cfg.w_v, cfg.w_phi, cfg.w_y));
    let mut x = *x0;
    let mut u = *u_prev;
    let mut j = 0.0;
    for k in 0..cfg.np {
        if k < cfg.nc {
            u += du[k];
        }
        x = problem.model.step(&x, &u);
        let e = problem.model.c * x - problem.y_des[k];
        j += e.dot(&(q * e));
    }
    for d in du {
        j += cfg.w_f * d[0] * d[0] + cfg.w_delta * d[1] * d[1];
    }
    for s in slack {
        j += cfg.slack_penalty * s * s + cfg.slack_linear_penalty * s;
    }
    j
}
