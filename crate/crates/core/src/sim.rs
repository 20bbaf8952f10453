//! Deterministic closed-loop simulator.
//!
//! Every tick the ego runs monitor, strategy, arbiter and MPC; the chosen
//! input is applied to the same discrete model the MPC predicts with. The
//! surrounding traffic is non-reactive. Each frame is labelled from the
//! realized state (what the ego actually did) and the counterfactual state
//! (what the initial reference would have done).

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::arbiter::{resolve, ResolvedPlan};
use crate::error::{Error, Result};
use crate::laws::{Law, LawSet, Phase};
use crate::model::{lane_of, RoadModel, VehicleState};
use crate::monitor::{
    detect_intent, hold_intent, nearest_ahead_in_lane, nearest_behind_in_lane, predict_states, IntentKind,
    Monitor, MonitorInputs, ViolationReport,
};
use crate::mpc::{linearize, mpc_step_or_hold, state_of, vehicle_of, Input, MpcConfig, VehicleParams, V_EPS};
use crate::reference::{RefSample, Reference, ReferenceSource};
use crate::scenario::{Scenario, SurroundingRuntime};
use crate::strategy::{generate_directives, DirectiveContext, FollowingTuning};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mpc: MpcConfig,
    pub params: VehicleParams,
    /// Run the compliance stack; when off the ego replays the initial reference.
    pub compliance: bool,
    pub tuning: FollowingTuning,
    /// Plant integration sub-steps per tick (1 = the MPC's own model).
    pub plant_substeps: usize,
    /// Longitudinal acceleration of a rear vehicle that counts as exogenous (m/s²).
    pub rear_accel_exogenous: f64,
}

impl SimConfig {
    pub fn new(dt: f64) -> Self {
        let params = VehicleParams::default();
        Self {
            mpc: MpcConfig::for_vehicle(&params, dt),
            params,
            compliance: true,
            tuning: FollowingTuning::default(),
            plant_substeps: 1,
            rear_accel_exogenous: 0.3,
        }
    }

    pub fn disabled(dt: f64) -> Self {
        Self { compliance: false, ..Self::new(dt) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelState {
    Compliant,
    ActiveViolation,
    PassiveViolation,
    ComplianceUnderIntervention,
}

impl LabelState {
    pub fn as_str(&self) -> &'static str {
        match self {
            LabelState::Compliant => "compliant",
            LabelState::ActiveViolation => "active",
            LabelState::PassiveViolation => "passive",
            LabelState::ComplianceUnderIntervention => "intervention",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameLabel {
    pub t: f64,
    pub state: LabelState,
    pub laws: LawSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub t: f64,
    pub ego: VehicleState,
    pub reference: RefSample,
    pub u: [f64; 2],
    pub label: FrameLabel,
    /// Laws the initial reference would violate.
    pub counterfactual: LawSet,
    /// Laws active in the compliance monitor.
    pub control: LawSet,
    pub phases: [Phase; 7],
    pub intent: IntentKind,
    #[serde(default, skip_serializing_if = "ResolvedPlan::is_empty")]
    pub plan: ResolvedPlan,
    pub slack: [f64; 2],
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub name: String,
    pub dt: f64,
    pub compliance: bool,
    pub frames: Vec<FrameRecord>,
    /// Why the run ended early, if it did.
    pub terminated: Option<String>,
    pub fallbacks: usize,
    pub slack_events: usize,
}

/// Per-law memory used to tell active from passive violations.
#[derive(Debug, Clone, Default)]
struct Classifier {
    passive_onset: [Option<bool>; 7],
    prev_ego: Option<VehicleState>,
    /// Surroundings of the last `window` frames, oldest first.
    history: VecDeque<Vec<VehicleState>>,
}

struct ClassifyInput<'a> {
    k: usize,
    dt: f64,
    ego: &'a VehicleState,
    surroundings: &'a [VehicleState],
    realized: &'a ViolationReport,
    counterfactual: LawSet,
    overridden: LawSet,
    road: &'a RoadModel,
    tuning: &'a FollowingTuning,
    rear_accel: f64,
    /// Frames looked back when judging a lead or rear vehicle.
    window: usize,
}

impl Classifier {
    /// Steepest mean acceleration of vehicle `id` from any remembered frame
    /// up to now, signed so that positive is the direction of concern.
    fn worst_accel(&self, v: &VehicleState, dt: f64, sign: f64) -> f64 {
        let n = self.history.len();
        self.history
            .iter()
            .enumerate()
            .filter_map(|(i, frame)| {
                let p = frame.iter().find(|s| s.id == v.id)?;
                Some(sign * (v.vx - p.vx) / ((n - i) as f64 * dt))
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn exogenous(&self, law: Law, inp: &ClassifyInput<'_>) -> bool {
        if inp.k == 0 || inp.overridden.contains(law) {
            return true;
        }
        let Some(prev_ego) = self.prev_ego.as_ref() else { return true };
        let prev_surroundings = self.history.back().map_or(&[][..], |v| v.as_slice());
        let lane = lane_of(inp.ego.y, inp.road);
        match law {
            Law::C => {
                let Some(l) = lane else { return false };
                let Some(lead) = nearest_ahead_in_lane(inp.ego, inp.surroundings, l, inp.road) else { return false };
                if lane_of(prev_ego.y, inp.road) == lane {
                    let prev_lead = nearest_ahead_in_lane(prev_ego, prev_surroundings, l, inp.road);
                    if prev_lead.is_none_or(|p| p.id != lead.id) {
                        return true;
                    }
                }
                self.worst_accel(lead, inp.dt, -1.0) > inp.tuning.comfort_decel
            }
            Law::D | Law::E => {
                let r = inp.realized;
                let target = if law == Law::D {
                    r.initial_lane.or(lane).map(|l| l + 1)
                } else {
                    r.overtake_lane.or(r.initial_lane).or(lane).and_then(|l| l.checked_sub(1))
                };
                let Some(target) = target.filter(|&t| t < inp.road.lane_count()) else { return false };
                let Some(rear) = nearest_behind_in_lane(inp.ego, inp.surroundings, target, inp.road) else {
                    return false;
                };
                let prev_rear = nearest_behind_in_lane(prev_ego, prev_surroundings, target, inp.road);
                if prev_rear.is_none_or(|p| p.id != rear.id) {
                    return true;
                }
                self.worst_accel(rear, inp.dt, 1.0) > inp.rear_accel
            }
            _ => false,
        }
    }

    fn classify(&mut self, t: f64, inp: &ClassifyInput<'_>) -> FrameLabel {
        let active = inp.realized.active;
        for law in Law::ALL {
            if !active.contains(law) {
                self.passive_onset[law.index()] = None;
            } else if self.passive_onset[law.index()].is_none() {
                self.passive_onset[law.index()] = Some(self.exogenous(law, inp));
            }
        }
        self.prev_ego = Some(*inp.ego);
        self.history.push_back(inp.surroundings.to_vec());
        while self.history.len() > inp.window.max(1) {
            self.history.pop_front();
        }
        let state = if active.is_empty() {
            if inp.counterfactual.is_empty() {
                LabelState::Compliant
            } else {
                LabelState::ComplianceUnderIntervention
            }
        } else if active.iter().all(|l| self.passive_onset[l.index()] == Some(true)) {
            LabelState::PassiveViolation
        } else {
            LabelState::ActiveViolation
        };
        FrameLabel { t, state, laws: active }
    }
}

fn ref_vehicle(template: &VehicleState, r: &RefSample) -> VehicleState {
    VehicleState { x: r.x, y: r.y, vx: r.vx, vy: r.vy, yaw: 0.0, yaw_rate: 0.0, ..*template }
}

/// Mutable state of one simulation.
pub struct World<'a> {
    scenario: &'a Scenario,
    cfg: &'a SimConfig,
    reference: Reference,
    pub k: usize,
    pub ego: VehicleState,
    pub u: Input,
    surroundings: Vec<SurroundingRuntime>,
    control: Monitor,
    realized: Monitor,
    counterfactual: Monitor,
    prediction: Vec<VehicleState>,
    last_plan: ResolvedPlan,
    classifier: Classifier,
    pub terminated: Option<String>,
}

impl<'a> World<'a> {
    pub fn new(scenario: &'a Scenario, cfg: &'a SimConfig) -> Result<Self> {
        scenario.validate()?;
        cfg.mpc.validate()?;
        cfg.params.validate()?;
        if (cfg.mpc.dt - scenario.dt).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "controller dt {} differs from scenario dt {}",
                cfg.mpc.dt, scenario.dt
            )));
        }
        if cfg.plant_substeps == 0 {
            return Err(Error::Config("plant_substeps must be at least 1".into()));
        }
        let reference = scenario.initial_ref.resolve(&scenario.road, scenario.ego.x)?;
        let surroundings = scenario
            .surroundings
            .iter()
            .map(|s| SurroundingRuntime::new(s, &scenario.road, 0.0))
            .collect::<Result<Vec<_>>>()?;
        let ego = if cfg.compliance { scenario.ego } else { ref_vehicle(&scenario.ego, &reference.sample(0.0)) };
        Ok(Self {
            scenario,
            cfg,
            reference,
            k: 0,
            ego,
            u: Input::zeros(),
            surroundings,
            control: Monitor::new(),
            realized: Monitor::new(),
            counterfactual: Monitor::new(),
            prediction: Vec::new(),
            last_plan: ResolvedPlan::default(),
            classifier: Classifier::default(),
            terminated: None,
        })
    }

    pub fn t(&self) -> f64 {
        self.k as f64 * self.scenario.dt
    }

    pub fn done(&self) -> bool {
        self.terminated.is_some() || self.k >= self.scenario.frame_count()
    }

    pub fn surroundings(&self) -> Vec<VehicleState> {
        self.surroundings.iter().filter(|s| s.present).map(|s| s.state).collect()
    }

    pub fn control_report(&self) -> &ViolationReport {
        self.control.report()
    }
}

/// One tick: label the current frame, run the compliance stack, integrate.
pub fn sim_step(world: &mut World<'_>) -> Result<Option<FrameRecord>> {
    if world.done() {
        return Ok(None);
    }
    let sc = world.scenario;
    let cfg = world.cfg;
    let (road, th, dt) = (&sc.road, &sc.thresholds, sc.dt);
    let t = world.t();
    let surr = world.surroundings();
    let ref_now = world.reference.sample(t);
    let ego = world.ego;

    let realized = world.realized.audit(t, dt, &ego, &surr, road, th).clone();
    let cf_vehicle = ref_vehicle(&ego, &ref_now);
    let cf = world.counterfactual.audit(t, dt, &cf_vehicle, &surr, road, th).active;

    let mut plan = ResolvedPlan::default();
    let mut slack = [0.0; 2];
    let mut fallback = false;
    if cfg.compliance {
        let planner_state = VehicleState { x: ego.x, ..cf_vehicle };
        let raw = detect_intent(&planner_state, &surr, road, th, sc.intent_at(t), t);
        let prev = world.control.report().clone();
        let intent = hold_intent(&prev.intent, &raw, &ego, road, lane_of(ref_now.y, road), &prev, t);
        let plan_states = predict_states(&ego, t, Some(&world.reference), cfg.mpc.np, dt);
        let ctrl_states = world.prediction.get(1..).unwrap_or(&[]);
        let inputs = MonitorInputs {
            t,
            dt,
            ego: &ego,
            surroundings: &surr,
            road,
            thresholds: th,
            intent,
            plan_states: &plan_states,
            controller_states: ctrl_states,
            hysteresis: true,
        };
        let report = world.control.step(&inputs).clone();
        let lead = report.following.and_then(|f| surr.iter().find(|s| s.id == f.lead));
        let ctx = DirectiveContext { road, ego: &ego, lead, initial_ref: ref_now, tuning: cfg.tuning };
        let directives = generate_directives(&report, &ctx, th).unwrap_or_else(|e| {
            log::warn!("t={t:.2}: {e}; no directives this tick");
            Vec::new()
        });
        plan = resolve(&directives);
        let sol = mpc_step_or_hold(&plan, &world.reference, t, &ego, &world.u, &cfg.mpc, &cfg.params);
        slack = sol.diagnostics.slack;
        fallback = sol.diagnostics.fallback;
        world.prediction = sol.predicted.iter().map(|x| vehicle_of(&ego, x)).collect();
        world.u = sol.u;
    }

    let overridden: LawSet = world.last_plan.overridden().chain(plan.overridden()).collect();
    let inp = ClassifyInput {
        k: world.k,
        dt,
        ego: &ego,
        surroundings: &surr,
        realized: &realized,
        counterfactual: cf,
        overridden,
        road,
        tuning: &cfg.tuning,
        rear_accel: cfg.rear_accel_exogenous,
        window: cfg.mpc.np,
    };
    let label = world.classifier.classify(t, &inp);
    let report = if cfg.compliance { world.control.report() } else { &realized };
    let record = FrameRecord {
        t,
        ego,
        reference: ref_now,
        u: [world.u[0], world.u[1]],
        label,
        counterfactual: cf,
        control: report.active,
        phases: report.phase,
        intent: report.intent.kind,
        plan: plan.clone(),
        slack,
        fallback,
    };
    world.last_plan = plan;

    // advance
    let t1 = (world.k + 1) as f64 * dt;
    if cfg.compliance {
        let n = cfg.plant_substeps;
        let h = dt / n as f64;
        let mut x = state_of(&world.ego);
        for _ in 0..n {
            let m = if n == 1 { linearize(&cfg.params, x[0], dt) } else { linearize(&cfg.params, x[0], h) };
            x = m.step(&x, &world.u);
            // brakes stop the car, they do not reverse it
            if x[0] < V_EPS {
                x[0] = x[0].max(0.0);
                x[1] = 0.0;
                x[2] = 0.0;
            }
        }
        world.ego = vehicle_of(&world.ego, &x);
    } else {
        world.ego = ref_vehicle(&world.ego, &world.reference.sample(t1));
    }
    for s in &mut world.surroundings {
        s.advance(t, dt);
    }
    world.k += 1;
    if !(world.ego.y > road.y_min() && world.ego.y < road.y_max()) || !world.ego.vx.is_finite() {
        world.terminated = Some(format!("ego left the road at t={t1:.2} s (y={:.3})", world.ego.y));
    }
    Ok(Some(record))
}

/// Runs a scenario to the end.
pub fn run(scenario: &Scenario, cfg: &SimConfig) -> Result<SimLog> {
    let mut world = World::new(scenario, cfg)?;
    let mut frames = Vec::with_capacity(scenario.frame_count());
    while let Some(f) = sim_step(&mut world)? {
        frames.push(f);
    }
    if let Some(reason) = &world.terminated {
        log::warn!("{}: {reason}", scenario.name);
    }
    let fallbacks = frames.iter().filter(|f| f.fallback).count();
    let slack_events = frames.iter().filter(|f| f.slack.iter().any(|s| *s > 1e-6)).count();
    Ok(SimLog {
        name: scenario.name.clone(),
        dt: scenario.dt,
        compliance: cfg.compliance,
        frames,
        terminated: world.terminated,
        fallbacks,
        slack_events,
    })
}

/// Runs with the default configuration for the scenario's time step.
pub fn run_default(scenario: &Scenario, compliance: bool) -> Result<SimLog> {
    let cfg = if compliance { SimConfig::new(scenario.dt) } else { SimConfig::disabled(scenario.dt) };
    run(scenario, &cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub frames: usize,
    pub counts: BTreeMap<String, usize>,
    /// Compliant frames, with or without intervention.
    pub compliance_rate: f64,
    pub active_rate: f64,
    pub passive_rate: f64,
    /// Share of all frames that are compliant only thanks to intervention.
    pub intervention_rate: f64,
    /// Frames a law was active in.
    pub law_histogram: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Frame-weighted rates over all logs. `compliance_rate`, `active_rate` and
/// `passive_rate` partition the frames.
pub fn aggregate_stats<'a>(logs: impl IntoIterator<Item = &'a SimLog>) -> Stats {
    let mut counts: BTreeMap<String, usize> = [
        LabelState::Compliant,
        LabelState::ComplianceUnderIntervention,
        LabelState::ActiveViolation,
        LabelState::PassiveViolation,
    ]
    .iter()
    .map(|s| (s.as_str().to_string(), 0))
    .collect();
    let mut hist: BTreeMap<String, usize> = Law::ALL.iter().map(|l| (l.letter().to_string(), 0)).collect();
    let mut frames = 0;
    for log in logs {
        for f in &log.frames {
            frames += 1;
            *counts.get_mut(f.label.state.as_str()).unwrap() += 1;
            for l in f.label.laws.iter() {
                *hist.get_mut(&l.letter().to_string()).unwrap() += 1;
            }
        }
    }
    if frames == 0 {
        return Stats {
            frames,
            counts,
            compliance_rate: 0.0,
            active_rate: 0.0,
            passive_rate: 0.0,
            intervention_rate: 0.0,
            law_histogram: hist,
            warning: Some("no frames".into()),
        };
    }
    let n = frames as f64;
    let c = |s: LabelState| counts[s.as_str()] as f64;
    let active_rate = c(LabelState::ActiveViolation) / n;
    let passive_rate = c(LabelState::PassiveViolation) / n;
    let intervention_rate = c(LabelState::ComplianceUnderIntervention) / n;
    let compliance_rate = (c(LabelState::Compliant) + c(LabelState::ComplianceUnderIntervention)) / n;
    Stats {
        frames,
        counts,
        compliance_rate,
        active_rate,
        passive_rate,
        intervention_rate,
        law_histogram: hist,
        warning: None,
    }
}

impl SimLog {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for f in &self.frames {
            serde_json::to_writer(&mut w, f)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_frames_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "t", "x", "y", "vx", "vy", "yaw", "force", "steer", "label", "laws", "control", "counterfactual",
            "slack_v", "slack_y", "fallback",
        ])?;
        for f in &self.frames {
            out.write_record([
                f.t.to_string(),
                f.ego.x.to_string(),
                f.ego.y.to_string(),
                f.ego.vx.to_string(),
                f.ego.vy.to_string(),
                f.ego.yaw.to_string(),
                f.u[0].to_string(),
                f.u[1].to_string(),
                f.label.state.as_str().to_string(),
                f.label.laws.to_string(),
                f.control.to_string(),
                f.counterfactual.to_string(),
                f.slack[0].to_string(),
                f.slack[1].to_string(),
                f.fallback.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Speed series: ego speed, reference speed and the lane's limits.
    pub fn write_speed_series<W: Write>(&self, road: &RoadModel, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "vx", "ref_vx", "v_min", "v_max"])?;
        for f in &self.frames {
            let lane = lane_of(f.ego.y, road).map(|l| road.lanes[l]);
            let (lo, hi) = lane.map_or((f64::NAN, f64::NAN), |l| (l.v_min, l.v_max));
            out.write_record([f.t, f.ego.vx, f.reference.vx, lo, hi].map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_trajectory_series<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "x", "y", "ref_x", "ref_y"])?;
        for f in &self.frames {
            out.write_record([f.t, f.ego.x, f.ego.y, f.reference.x, f.reference.y].map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_label_series<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "label".into(), "laws".into(), "control".into(), "intent".into()];
        header.extend(Law::ALL.iter().map(|l| format!("phase_{l}")));
        out.write_record(&header)?;
        for f in &self.frames {
            let mut row = vec![
                f.t.to_string(),
                f.label.state.as_str().to_string(),
                f.label.laws.to_string(),
                f.control.to_string(),
                format!("{:?}", f.intent),
            ];
            row.extend(f.phases.iter().map(|p| format!("{p:?}")));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Vec<FrameRecord>> {
        text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
    }
}

/// Steady-state error helper used by checks: largest `|ego - reference|`
/// over the frames in position and speed.
pub fn max_reference_deviation(log: &SimLog) -> f64 {
    log.frames
        .iter()
        .map(|f| {
            (f.ego.x - f.reference.x)
                .abs()
                .max((f.ego.y - f.reference.y).abs())
                .max((f.ego.vx - f.reference.vx).abs())
                .max((f.ego.vy - f.reference.vy).abs())
        })
        .fold(0.0, f64::max)
}
