//! Online violation monitor.
//!
//! The monitor evaluates the basic-violation predicates over a set of
//! predicted ego states and advances the per-law state machines. Three state
//! sources feed it in closed loop:
//!
//! * the current ego state,
//! * the states the planner's initial reference would produce (`plan`),
//! * the states predicted by the tracking controller on its previous solve.
//!
//! A law is flagged when its predicate holds at any step of any source. Speed
//! laws (`a`, `b`) and the overtaking-speed law (`g`) distinguish a
//! `Violation` (the vehicle itself is non-compliant) from a
//! `DecisionViolation` (only the planner's reference is).
//!
//! The same machinery run with only the current state and no hysteresis is
//! the realized (audit) monitor used for statistics.

use serde::{Deserialize, Serialize};

use crate::laws::{Law, LawSet, Phase};
use crate::model::{
    fully_inside_lane, lane_of, longitudinal_gap, on_any_lane_line, overlaps_lane_line, ttcx,
    LawThresholds, RoadModel, VehicleId, VehicleState,
};
use crate::reference::ReferenceSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum IntentKind {
    #[default]
    None,
    ChangeLeft,
    ChangeRight,
    Overtake,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Intent {
    pub kind: IntentKind,
    /// Time the intent was first held; ignored when `kind` is `None`.
    pub since: Option<f64>,
}

impl Intent {
    pub const NONE: Intent = Intent { kind: IntentKind::None, since: None };

    pub fn new(kind: IntentKind, since: f64) -> Self {
        match kind {
            IntentKind::None => Self::NONE,
            _ => Self { kind, since: Some(since) },
        }
    }

    pub fn is_none(&self) -> bool {
        self.kind == IntentKind::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackedVehicle {
    pub id: VehicleId,
    pub vx: f64,
}

/// Lead vehicle that triggered the following-distance law and the distance
/// that ends the violation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowingTrigger {
    pub lead: VehicleId,
    pub compliance_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub t: f64,
    pub active: LawSet,
    pub phase: [Phase; 7],
    /// Time the footprint started to straddle a lane line.
    pub line_enter_time: Option<f64>,
    /// Lane latched when a trigger fired.
    pub initial_lane: Option<usize>,
    /// Lane latched once the overtaking lane change completed.
    pub overtake_lane: Option<usize>,
    /// Vehicle being overtaken.
    pub overtaken: Option<TrackedVehicle>,
    pub following: Option<FollowingTrigger>,
    /// Lane whose limits the active speed law refers to.
    #[serde(default)]
    pub speed_lane: Option<usize>,
    pub intent: Intent,
}

impl Default for ViolationReport {
    fn default() -> Self {
        Self {
            t: 0.0,
            active: LawSet::EMPTY,
            phase: [Phase::Compliance; 7],
            line_enter_time: None,
            initial_lane: None,
            overtake_lane: None,
            overtaken: None,
            following: None,
            speed_lane: None,
            intent: Intent::NONE,
        }
    }
}

impl ViolationReport {
    pub fn phase(&self, law: Law) -> Phase {
        self.phase[law.index()]
    }

    fn set_phase(&mut self, law: Law, phase: Phase) {
        self.phase[law.index()] = phase;
        self.active.set(law, phase != Phase::Compliance);
    }
}

/// States over the prediction horizon, first element one step ahead.
///
/// With a plan the longitudinal speed follows the plan's samples and `x` is
/// integrated from the current position; the lateral offset to the plan
/// closes linearly over the horizon, so lanes in between are visited.
/// Without a plan the vehicle keeps its velocity.
pub fn predict_states(
    ego: &VehicleState,
    t: f64,
    plan: Option<&dyn ReferenceSource>,
    horizon: usize,
    dt: f64,
) -> Vec<VehicleState> {
    let mut out = Vec::with_capacity(horizon);
    let mut s = *ego;
    let lateral = ego.lateral_speed();
    let offset = plan.map_or(0.0, |p| ego.y - p.sample(t).y);
    for k in 1..=horizon {
        let tk = t + k as f64 * dt;
        match plan {
            Some(plan) => {
                let r = plan.sample(tk);
                let w = 1.0 - k as f64 / horizon as f64;
                s.x += r.vx * dt;
                s.y = r.y + offset * w;
                s.vx = r.vx;
                s.vy = r.vy - offset / (horizon as f64 * dt);
                s.yaw = 0.0;
                s.yaw_rate = 0.0;
            }
            None => {
                s.x += s.vx * dt;
                s.y += lateral * dt;
            }
        }
        out.push(s);
    }
    out
}

/// Constant-velocity propagation of the surrounding vehicles to time `tk`.
pub fn propagate_surroundings(surroundings: &[VehicleState], t: f64, tk: f64) -> Vec<VehicleState> {
    let h = tk - t;
    surroundings
        .iter()
        .map(|s| {
            let mut p = *s;
            p.x += s.vx * h;
            p.y += s.lateral_speed() * h;
            p
        })
        .collect()
}

pub(crate) fn nearest_ahead_in_lane<'a>(
    ego: &VehicleState,
    others: &'a [VehicleState],
    lane: usize,
    road: &RoadModel,
) -> Option<&'a VehicleState> {
    others
        .iter()
        .filter(|s| s.id != ego.id && s.x > ego.x && lane_of(s.y, road) == Some(lane))
        .min_by(|a, b| a.x.total_cmp(&b.x))
}

pub(crate) fn nearest_behind_in_lane<'a>(
    ego: &VehicleState,
    others: &'a [VehicleState],
    lane: usize,
    road: &RoadModel,
) -> Option<&'a VehicleState> {
    others
        .iter()
        .filter(|s| s.id != ego.id && s.x <= ego.x && lane_of(s.y, road) == Some(lane))
        .max_by(|a, b| a.x.total_cmp(&b.x))
}

/// Detects a decision intent from the vehicle state when no behavioral-layer
/// intent is supplied.
pub fn detect_intent(
    ego: &VehicleState,
    surroundings: &[VehicleState],
    road: &RoadModel,
    thresholds: &LawThresholds,
    external: Option<Intent>,
    t: f64,
) -> Intent {
    if let Some(intent) = external {
        return intent;
    }
    let vy = ego.lateral_speed();
    if vy.abs() <= thresholds.lat_intent_speed {
        return Intent::NONE;
    }
    let overtaking = lane_of(ego.y, road).is_some_and(|lane| {
        surroundings.iter().any(|s| {
            s.id != ego.id
                && s.x > ego.x
                && lane_of(s.y, road) == Some(lane)
                && s.vx < ego.vx
                && ttcx(ego, s).is_some_and(|t| t.abs() < thresholds.ttc_overtake)
        })
    });
    let kind = if overtaking {
        IntentKind::Overtake
    } else if vy > 0.0 {
        IntentKind::ChangeLeft
    } else {
        IntentKind::ChangeRight
    };
    Intent::new(kind, t)
}

/// Keeps a maneuver intent alive until the maneuver is settled.
///
/// `reference_lane` is the lane of the planner's reference at `t`; in audit
/// mode there is no reference and a lane change is held only while the
/// footprint is on a lane line.
pub fn hold_intent(
    prev: &Intent,
    raw: &Intent,
    ego: &VehicleState,
    road: &RoadModel,
    reference_lane: Option<usize>,
    memory: &ViolationReport,
    t: f64,
) -> Intent {
    let settled = fully_inside_lane(ego, road);
    let on_line = on_any_lane_line(ego, road);
    let ego_lane = lane_of(ego.y, road);

    if prev.kind == IntentKind::Overtake {
        let finished = match memory.overtake_lane {
            Some(_) => settled.is_some() && settled == memory.initial_lane,
            None => {
                raw.is_none()
                    && settled.is_some()
                    && settled == memory.initial_lane
                    && reference_lane.is_none_or(|l| Some(l) == memory.initial_lane)
            }
        };
        if !finished {
            return *prev;
        }
    }
    if !raw.is_none() {
        if raw.kind == prev.kind {
            return *prev;
        }
        return Intent::new(raw.kind, t);
    }
    let pending = on_line || reference_lane.is_some_and(|l| Some(l) != ego_lane);
    if matches!(prev.kind, IntentKind::ChangeLeft | IntentKind::ChangeRight) && pending {
        return *prev;
    }
    Intent::NONE
}

/// One predicted instant: the ego state and the surroundings at that time.
#[derive(Debug, Clone)]
pub struct PredictedStep {
    pub t: f64,
    pub ego: VehicleState,
    pub surroundings: Vec<VehicleState>,
}

impl PredictedStep {
    pub fn current(t: f64, ego: &VehicleState, surroundings: &[VehicleState]) -> Self {
        Self { t, ego: *ego, surroundings: surroundings.to_vec() }
    }
}

/// Builds predicted steps for `states`, assumed to lie at `t + k dt` for `k = 1..`.
pub fn steps_from_states(
    t: f64,
    dt: f64,
    states: &[VehicleState],
    surroundings: &[VehicleState],
) -> Vec<PredictedStep> {
    states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let tk = t + (k + 1) as f64 * dt;
            PredictedStep { t: tk, ego: *s, surroundings: propagate_surroundings(surroundings, t, tk) }
        })
        .collect()
}

/// Memory the predicates read.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PredicateContext {
    pub intent: IntentKind,
    pub line_enter_time: Option<f64>,
    pub initial_lane: Option<usize>,
    pub overtake_lane: Option<usize>,
    pub overtaken_speed: Option<f64>,
    /// Use the exit distance for the following law (it was active before).
    pub following_hysteresis: bool,
    /// Lower bound on the speed that selects the following distance. Set to
    /// the present speed when judging predicted states, which cannot shed
    /// speed instantly.
    pub speed_floor: Option<f64>,
}

impl PredicateContext {
    pub fn from_report(report: &ViolationReport, hysteresis: bool) -> Self {
        Self {
            intent: report.intent.kind,
            line_enter_time: report.line_enter_time,
            initial_lane: report.initial_lane,
            overtake_lane: report.overtake_lane,
            overtaken_speed: report.overtaken.map(|o| o.vx),
            following_hysteresis: hysteresis && report.active.contains(Law::C),
            speed_floor: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub laws: LawSet,
    /// Speed law that holds at the earliest step, if any.
    pub first_speed_law: Option<Law>,
    /// Strictest lane among the steps that break that law.
    pub speed_lane: Option<usize>,
    pub following: Option<FollowingTrigger>,
    /// Some step shows the return from the overtaking lane.
    pub returning: bool,
}

fn lane_unsafe(
    ego: &VehicleState,
    others: &[VehicleState],
    target: usize,
    road: &RoadModel,
    th: &LawThresholds,
) -> bool {
    nearest_behind_in_lane(ego, others, target, road).is_some_and(|rear| {
        ttcx(ego, rear).is_some_and(|t| t <= th.ttcx_min) || longitudinal_gap(rear, ego) <= th.d_clmin
    })
}

/// Evaluates the basic-violation predicates at every step. A law is in the
/// result if it holds at any step.
pub fn evaluate_predicates(
    steps: &[PredictedStep],
    road: &RoadModel,
    ctx: &PredicateContext,
    th: &LawThresholds,
) -> Evaluation {
    let mut eval = Evaluation::default();
    let mut t_in = ctx.line_enter_time;
    for step in steps {
        let ego = &step.ego;
        let others = step.surroundings.as_slice();
        let lane = lane_of(ego.y, road);

        if let Some(l) = lane {
            let limits = &road.lanes[l];
            let a = ego.vx < limits.v_min;
            let b = ego.vx > limits.v_max;
            eval.laws.set(Law::A, eval.laws.contains(Law::A) || a);
            eval.laws.set(Law::B, eval.laws.contains(Law::B) || b);
            if eval.first_speed_law.is_none() {
                eval.first_speed_law = if a { Some(Law::A) } else if b { Some(Law::B) } else { None };
            }
            // strictest lane among the steps that break the same limit
            match eval.first_speed_law {
                Some(Law::A) if a => {
                    if eval.speed_lane.is_none_or(|k| limits.v_min > road.lanes[k].v_min) {
                        eval.speed_lane = Some(l);
                    }
                }
                Some(Law::B) if b => {
                    if eval.speed_lane.is_none_or(|k| limits.v_max < road.lanes[k].v_max) {
                        eval.speed_lane = Some(l);
                    }
                }
                _ => {}
            }

            if let Some(lead) = nearest_ahead_in_lane(ego, others, l, road) {
                let v = ctx.speed_floor.map_or(ego.vx, |f| ego.vx.max(f));
                let needed = if ctx.following_hysteresis {
                    th.follow_exit_distance(v)
                } else {
                    th.follow_distance(v)
                };
                if longitudinal_gap(ego, lead) < needed {
                    eval.laws.insert(Law::C);
                    if eval.following.is_none() {
                        eval.following = Some(FollowingTrigger {
                            lead: lead.id,
                            compliance_distance: th.follow_exit_distance(v),
                        });
                    }
                }
            }
        }

        let left_stage = ctx.intent == IntentKind::ChangeLeft
            || (ctx.intent == IntentKind::Overtake && ctx.overtake_lane.is_none());
        if left_stage {
            let target = ctx.initial_lane.or(lane).map(|l| l + 1).filter(|&l| l < road.lane_count());
            if let Some(target) = target {
                let line = road.lanes[target].y_right;
                let entering = overlaps_lane_line(ego, line) || lane == Some(target);
                if entering && lane_unsafe(ego, others, target, road, th) {
                    eval.laws.insert(Law::D);
                }
            }
        }

        let right_target = match (ctx.intent, ctx.overtake_lane) {
            (IntentKind::ChangeRight, _) => ctx.initial_lane.or(lane).and_then(|l| l.checked_sub(1)),
            (IntentKind::Overtake, Some(o)) => o.checked_sub(1),
            _ => None,
        };
        if let Some(target) = right_target {
            let line = road.lanes[target].y_left;
            let entering = overlaps_lane_line(ego, line) || lane == Some(target);
            if entering {
                if ctx.intent == IntentKind::Overtake {
                    eval.returning = true;
                    if ctx.overtaken_speed.is_some_and(|v| ego.vx < v + th.dv_ot) {
                        eval.laws.insert(Law::G);
                    }
                }
                if lane_unsafe(ego, others, target, road, th) {
                    eval.laws.insert(Law::E);
                }
            }
        }

        if on_any_lane_line(ego, road) {
            let entered = *t_in.get_or_insert(step.t);
            if ctx.intent != IntentKind::None && step.t - entered > th.t_max_cl {
                eval.laws.insert(Law::F);
            }
        } else {
            t_in = None;
        }
    }
    eval
}

/// Everything one monitor tick consumes.
#[derive(Debug, Clone, Copy)]
pub struct MonitorInputs<'a> {
    pub t: f64,
    pub dt: f64,
    pub ego: &'a VehicleState,
    pub surroundings: &'a [VehicleState],
    pub road: &'a RoadModel,
    pub thresholds: &'a LawThresholds,
    /// Held intent for this tick.
    pub intent: Intent,
    /// States predicted from the planner's initial reference.
    pub plan_states: &'a [VehicleState],
    /// States predicted by the tracking controller.
    pub controller_states: &'a [VehicleState],
    /// Apply the following-distance exit hysteresis.
    pub hysteresis: bool,
}

fn find_overtaken(
    ego: &VehicleState,
    surroundings: &[VehicleState],
    road: &RoadModel,
    lane: Option<usize>,
) -> Option<TrackedVehicle> {
    let lane = lane?;
    let ahead = || surroundings.iter().filter(|s| s.x > ego.x && lane_of(s.y, road) == Some(lane));
    ahead()
        .filter(|s| s.vx < ego.vx)
        .min_by(|a, b| a.x.total_cmp(&b.x))
        .or_else(|| ahead().min_by(|a, b| a.x.total_cmp(&b.x)))
        .map(|s| TrackedVehicle { id: s.id, vx: s.vx })
}

/// Advances the monitor by one tick.
pub fn monitor_step(inp: &MonitorInputs<'_>, prev: &ViolationReport) -> ViolationReport {
    let ego = inp.ego;
    let road = inp.road;
    let th = inp.thresholds;
    let mut rep = prev.clone();
    rep.t = inp.t;

    let ego_lane = lane_of(ego.y, road);
    let prev_kind = prev.intent.kind;
    let kind = inp.intent.kind;
    rep.intent = inp.intent;

    // Trigger latches.
    let onset = kind != IntentKind::None
        && (prev_kind == IntentKind::None || (kind != prev_kind && kind != IntentKind::Overtake));
    if onset || (kind != IntentKind::None && rep.initial_lane.is_none()) {
        rep.initial_lane = ego_lane;
    }
    if kind == IntentKind::Overtake {
        if prev_kind != IntentKind::Overtake || rep.overtaken.is_none() {
            rep.overtaken = find_overtaken(ego, inp.surroundings, road, rep.initial_lane);
        } else if let Some(o) = rep.overtaken {
            if let Some(s) = inp.surroundings.iter().find(|s| s.id == o.id) {
                rep.overtaken = Some(TrackedVehicle { id: o.id, vx: s.vx });
            }
        }
        if rep.overtake_lane.is_none() {
            if let (Some(init), Some(inside)) = (rep.initial_lane, fully_inside_lane(ego, road)) {
                if inside == init + 1 {
                    rep.overtake_lane = Some(inside);
                }
            }
        }
    } else {
        rep.overtake_lane = None;
        rep.overtaken = None;
    }

    // Lane-line timer.
    if on_any_lane_line(ego, road) {
        rep.line_enter_time.get_or_insert(inp.t);
    } else {
        rep.line_enter_time = None;
    }

    let ctx = PredicateContext::from_report(&rep, inp.hysteresis);
    let current = evaluate_predicates(&[PredictedStep::current(inp.t, ego, inp.surroundings)], road, &ctx, th);
    let ctx = PredicateContext { speed_floor: Some(ego.vx), ..ctx };
    let plan = evaluate_predicates(
        &steps_from_states(inp.t, inp.dt, inp.plan_states, inp.surroundings),
        road,
        &ctx,
        th,
    );
    let ctrl = evaluate_predicates(
        &steps_from_states(inp.t, inp.dt, inp.controller_states, inp.surroundings),
        road,
        &ctx,
        th,
    );
    let any = current.laws.union(plan.laws).union(ctrl.laws);

    // Speed limits: the vehicle's own state decides Violation, the plan
    // decides DecisionViolation.
    let (pa, pb) = match (current.first_speed_law, plan.first_speed_law) {
        (Some(Law::A), _) => (Phase::Violation, Phase::Compliance),
        (Some(_), _) => (Phase::Compliance, Phase::Violation),
        (None, Some(Law::A)) => (Phase::DecisionViolation, Phase::Compliance),
        (None, Some(_)) => (Phase::Compliance, Phase::DecisionViolation),
        (None, None) => (Phase::Compliance, Phase::Compliance),
    };
    rep.set_phase(Law::A, pa);
    rep.set_phase(Law::B, pb);
    let law = if pa != Phase::Compliance { Some(Law::A) } else if pb != Phase::Compliance { Some(Law::B) } else { None };
    rep.speed_lane = [&current, &plan]
        .into_iter()
        .filter(|e| law.is_some() && e.first_speed_law == law)
        .filter_map(|e| e.speed_lane)
        .max_by(|&i, &j| {
            let (li, lj) = (&road.lanes[i], &road.lanes[j]);
            if law == Some(Law::A) { li.v_min.total_cmp(&lj.v_min) } else { lj.v_max.total_cmp(&li.v_max) }
        });

    for law in [Law::C, Law::D, Law::E, Law::F] {
        rep.set_phase(law, if any.contains(law) { Phase::Violation } else { Phase::Compliance });
    }
    rep.following = if any.contains(Law::C) {
        current.following.or(plan.following).or(ctrl.following)
    } else {
        None
    };

    // Overtaking speed: held in the overtaking lane while too slow, speed
    // kept up while only the plan is too slow.
    let returning = current.returning || plan.returning || ctrl.returning;
    let thr = rep.overtaken.map(|o| o.vx + th.dv_ot);
    let pg = match thr {
        Some(thr) if kind == IntentKind::Overtake && rep.overtake_lane.is_some() => {
            if current.laws.contains(Law::G) || (returning && ego.vx < thr) {
                Phase::Violation
            } else if plan.laws.contains(Law::G) || ctrl.laws.contains(Law::G) {
                Phase::DecisionViolation
            } else {
                Phase::Compliance
            }
        }
        _ => Phase::Compliance,
    };
    rep.set_phase(Law::G, pg);

    let lateral_laws = [Law::C, Law::D, Law::E, Law::F, Law::G];
    if rep.initial_lane.is_none() && lateral_laws.iter().any(|l| rep.active.contains(*l)) {
        rep.initial_lane = ego_lane;
    }
    if kind == IntentKind::None {
        if !lateral_laws.iter().any(|l| rep.active.contains(*l)) {
            rep.initial_lane = None;
        } else if prev_kind != IntentKind::None {
            // the manoeuvre is over: hold the lane the ego ended up in
            rep.initial_lane = fully_inside_lane(ego, road).or(ego_lane);
        }
    }
    rep
}

/// Stateful wrapper that owns the previous report.
#[derive(Debug, Clone, Default)]
pub struct Monitor {
    report: ViolationReport,
}

impl Monitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn report(&self) -> &ViolationReport {
        &self.report
    }

    pub fn step(&mut self, inputs: &MonitorInputs<'_>) -> &ViolationReport {
        self.report = monitor_step(inputs, &self.report);
        &self.report
    }

    /// Realized evaluation of a recorded or simulated state: intent from the
    /// vehicle's own motion, no prediction and no hysteresis.
    pub fn audit(
        &mut self,
        t: f64,
        dt: f64,
        ego: &VehicleState,
        surroundings: &[VehicleState],
        road: &RoadModel,
        thresholds: &LawThresholds,
    ) -> &ViolationReport {
        let raw = detect_intent(ego, surroundings, road, thresholds, None, t);
        let intent = hold_intent(&self.report.intent, &raw, ego, road, None, &self.report, t);
        let inputs = MonitorInputs {
            t,
            dt,
            ego,
            surroundings,
            road,
            thresholds,
            intent,
            plan_states: &[],
            controller_states: &[],
            hysteresis: false,
        };
        self.step(&inputs)
    }
}
