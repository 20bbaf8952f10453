//! Compliance state-transition strategy: turns the monitor's report into
//! reference and constraint directives along the four transition paths
//! (speed reference, speed constraint, lateral reference, lateral constraint).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::{Law, Phase};
use crate::model::{lane_of, longitudinal_gap, LawThresholds, RoadModel, VehicleState};
use crate::monitor::ViolationReport;
use crate::reference::RefSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variable {
    Speed,
    LateralPosition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransitionPath {
    /// ① compliance reference speed
    SpeedReference,
    /// ② compliance speed constraint
    SpeedConstraint,
    /// ③ compliance lateral-position reference
    LateralReference,
    /// ④ compliance lateral-position constraint
    LateralConstraint,
}

impl TransitionPath {
    pub fn sign(self) -> u8 {
        self as u8 + 1
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceDirective {
    pub variable: Variable,
    pub reference: Option<f64>,
    pub constraint: Option<Interval>,
    pub source: Law,
    pub paths: Vec<TransitionPath>,
}

impl ComplianceDirective {
    pub fn new(variable: Variable, reference: Option<f64>, constraint: Option<Interval>, source: Law) -> Self {
        let (rp, cp) = match variable {
            Variable::Speed => (TransitionPath::SpeedReference, TransitionPath::SpeedConstraint),
            Variable::LateralPosition => (TransitionPath::LateralReference, TransitionPath::LateralConstraint),
        };
        let mut paths = Vec::with_capacity(2);
        if reference.is_some() {
            paths.push(rp);
        }
        if constraint.is_some() {
            paths.push(cp);
        }
        Self { variable, reference, constraint, source, paths }
    }
}

/// Inputs of the following-distance reference speed. Positions are bumper
/// positions, so `x0_tgt - x0_ego` is the bumper gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowingGapContext {
    pub v0_ego: f64,
    pub v0_tgt: f64,
    pub x0_ego: f64,
    pub x0_tgt: f64,
    /// Compliance distance.
    pub d: f64,
    /// Time to decelerate to the lead's speed.
    pub t1: f64,
    /// Time to reach the compliance distance.
    pub t2: f64,
}

/// Tuning of the default `t1`/`t2` choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowingTuning {
    /// Comfortable deceleration used for `t1` (m/s²).
    pub comfort_decel: f64,
    /// Largest speed deficit below the lead the reference may command (m/s).
    pub recovery_speed: f64,
    /// Lower bound of `t2` (s).
    pub min_recovery_time: f64,
}

impl Default for FollowingTuning {
    fn default() -> Self {
        Self { comfort_decel: 2.0, recovery_speed: 5.0, min_recovery_time: 1.0 }
    }
}

impl FollowingGapContext {
    /// Context with the default recovery times for the current gap.
    pub fn with_default_times(v0_ego: f64, v0_tgt: f64, gap0: f64, d: f64, tuning: &FollowingTuning) -> Self {
        let dv = (v0_ego - v0_tgt).max(0.0);
        let shortfall = (d - gap0).max(0.0);
        let t1 = dv / tuning.comfort_decel;
        let t2 = (2.0 * t1)
            .max((t1 * dv + 2.0 * shortfall) / tuning.recovery_speed)
            .max(t1 + tuning.min_recovery_time.min(1.0))
            .max(tuning.min_recovery_time);
        Self { v0_ego, v0_tgt, x0_ego: 0.0, x0_tgt: gap0, d, t1, t2 }
    }
}

/// Reference speed that opens the gap to the compliance distance under a
/// constant ego deceleration and a constant lead speed; floored at zero.
pub fn following_reference_speed(ctx: &FollowingGapContext) -> Result<f64> {
    if !(ctx.t2 > 0.0) {
        return Err(Error::Config(format!("t2 must be positive, got {}", ctx.t2)));
    }
    let v = -ctx.t1 * (ctx.v0_ego - ctx.v0_tgt) / ctx.t2 - 2.0 * (ctx.d - ctx.x0_tgt + ctx.x0_ego) / ctx.t2
        + ctx.v0_tgt;
    Ok(v.max(0.0))
}

/// Everything the strategy needs besides the report.
#[derive(Debug, Clone, Copy)]
pub struct DirectiveContext<'a> {
    pub road: &'a RoadModel,
    pub ego: &'a VehicleState,
    /// Current state of the vehicle that triggered the following law.
    pub lead: Option<&'a VehicleState>,
    /// The planner's reference at the current time.
    pub initial_ref: RefSample,
    pub tuning: FollowingTuning,
}

fn lane_constraint(road: &RoadModel, lanes: &[usize], width: f64) -> Interval {
    let lo = lanes.iter().map(|&l| road.lanes[l].y_right).fold(f64::INFINITY, f64::min);
    let hi = lanes.iter().map(|&l| road.lanes[l].y_left).fold(f64::NEG_INFINITY, f64::max);
    Interval::new(lo + 0.5 * width, hi - 0.5 * width)
}

/// Maps the active violations to compliance directives. An empty result
/// means the initial reference passes through untouched.
pub fn generate_directives(
    report: &ViolationReport,
    ctx: &DirectiveContext<'_>,
    thresholds: &LawThresholds,
) -> Result<Vec<ComplianceDirective>> {
    let road = ctx.road;
    let width = ctx.ego.width;
    let current = lane_of(ctx.ego.y, road);
    let mut out = Vec::new();

    if let Some(cur) = current {
        // a plan that violates in another lane is held to that lane's limits
        let lane = &road.lanes[report.speed_lane.filter(|&l| l < road.lane_count()).unwrap_or(cur)];
        let band = Interval::new(lane.v_min, lane.v_max);
        match (report.phase(Law::A), report.phase(Law::B)) {
            (Phase::Violation, _) => out.push(ComplianceDirective::new(Variable::Speed, Some(lane.v_min), None, Law::A)),
            (Phase::DecisionViolation, _) => {
                out.push(ComplianceDirective::new(Variable::Speed, Some(lane.v_min), Some(band), Law::A))
            }
            (_, Phase::Violation) => out.push(ComplianceDirective::new(Variable::Speed, Some(lane.v_max), None, Law::B)),
            (_, Phase::DecisionViolation) => {
                out.push(ComplianceDirective::new(Variable::Speed, Some(lane.v_max), Some(band), Law::B))
            }
            _ => out.push(ComplianceDirective::new(Variable::Speed, None, Some(band), Law::A)),
        }
        // not into that lane before the speed fits it
        if report.speed_lane.is_some_and(|l| l != cur) {
            let hold = if report.active.contains(Law::A) && ctx.ego.vx < lane.v_min {
                Some(Law::A)
            } else if report.active.contains(Law::B) && ctx.ego.vx > lane.v_max {
                Some(Law::B)
            } else {
                None
            };
            if let Some(law) = hold {
                out.push(ComplianceDirective::new(
                    Variable::LateralPosition,
                    None,
                    Some(lane_constraint(road, &[cur], width)),
                    law,
                ));
            }
        }
    }

    let need_current = || current.ok_or_else(|| Error::Config("ego is off the road".into()));
    let need_initial = |law: Law| {
        report
            .initial_lane
            .filter(|&l| l < road.lane_count())
            .ok_or_else(|| Error::Config(format!("law {law} is active without an initial lane")))
    };

    if report.active.contains(Law::C) {
        let cur = need_current()?;
        let init = need_initial(Law::C)?;
        if let (Some(lead), Some(trigger)) = (ctx.lead, report.following) {
            let gap0 = longitudinal_gap(ctx.ego, lead);
            let gctx = FollowingGapContext::with_default_times(
                ctx.ego.vx,
                lead.vx,
                gap0,
                trigger.compliance_distance,
                &ctx.tuning,
            );
            let mut v = following_reference_speed(&gctx)?.min(road.lanes[cur].v_max);
            if gap0 >= trigger.compliance_distance {
                // gap already restored: hold it rather than close in again
                v = v.min(lead.vx);
            }
            out.push(ComplianceDirective::new(Variable::Speed, Some(v), None, Law::C));
        }
        out.push(ComplianceDirective::new(
            Variable::LateralPosition,
            Some(road.lanes[init].center()),
            Some(lane_constraint(road, &[cur, init], width)),
            Law::C,
        ));
    }
    if report.active.contains(Law::D) {
        let cur = need_current()?;
        let init = need_initial(Law::D)?;
        out.push(ComplianceDirective::new(
            Variable::LateralPosition,
            Some(road.lanes[init].center()),
            Some(lane_constraint(road, &[cur, init], width)),
            Law::D,
        ));
    }
    if report.active.contains(Law::E) {
        let cur = need_current()?;
        out.push(ComplianceDirective::new(
            Variable::LateralPosition,
            Some(road.lanes[cur].center()),
            Some(lane_constraint(road, &[cur], width)),
            Law::E,
        ));
    }
    if report.active.contains(Law::F) {
        let cur = need_current()?;
        out.push(ComplianceDirective::new(Variable::LateralPosition, Some(road.lanes[cur].center()), None, Law::F));
    }
    if report.active.contains(Law::G) {
        let cur = need_current()?;
        let target = report
            .overtaken
            .ok_or_else(|| Error::Config("law g is active without an overtaken vehicle".into()))?;
        let v_max = road.lanes[cur].v_max;
        let v = (target.vx + thresholds.dv_ot).clamp(0.0, v_max);
        match report.phase(Law::G) {
            Phase::DecisionViolation => {
                out.push(ComplianceDirective::new(Variable::Speed, Some(v), Some(Interval::new(v, v_max)), Law::G));
            }
            _ => {
                let lane = report
                    .overtake_lane
                    .filter(|&l| l < road.lane_count())
                    .ok_or_else(|| Error::Config("law g is active without an overtaking lane".into()))?;
                out.push(ComplianceDirective::new(Variable::Speed, Some(v), None, Law::G));
                out.push(ComplianceDirective::new(
                    Variable::LateralPosition,
                    Some(road.lanes[lane].center()),
                    Some(lane_constraint(road, &[lane], width)),
                    Law::G,
                ));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::LawSet;
    use crate::monitor::{FollowingTrigger, TrackedVehicle};

    fn road() -> RoadModel {
        RoadModel::uniform(3.75, &[(22.0, 33.0), (22.0, 33.0), (22.0, 33.0)]).unwrap()
    }

    fn report(active: &[(Law, Phase)]) -> ViolationReport {
        let mut r = ViolationReport::default();
        for &(law, phase) in active {
            r.phase[law.index()] = phase;
            r.active.insert(law);
        }
        r
    }

    fn ctx<'a>(road: &'a RoadModel, ego: &'a VehicleState, lead: Option<&'a VehicleState>) -> DirectiveContext<'a> {
        DirectiveContext {
            road,
            ego,
            lead,
            initial_ref: RefSample { t: 0.0, x: ego.x, y: ego.y, vx: ego.vx, vy: 0.0 },
            tuning: FollowingTuning::default(),
        }
    }

    #[test]
    fn eq9_examples() {
        let c = FollowingGapContext { v0_ego: 30.0, v0_tgt: 25.0, x0_ego: 0.0, x0_tgt: 80.0, d: 100.0, t1: 4.0, t2: 10.0 };
        assert!((following_reference_speed(&c).unwrap() - 19.0).abs() < 1e-12);
        let same = FollowingGapContext { v0_ego: 25.0, x0_tgt: 100.0, ..c };
        assert!((following_reference_speed(&same).unwrap() - 25.0).abs() < 1e-12);
        let bad = FollowingGapContext { t2: 0.0, ..c };
        assert!(following_reference_speed(&bad).is_err());
        let floor = FollowingGapContext { x0_tgt: 0.0, t2: 1.0, ..c };
        assert_eq!(following_reference_speed(&floor).unwrap(), 0.0);
    }

    #[test]
    fn default_times_bound_the_deficit() {
        let tuning = FollowingTuning::default();
        for &(ve, vt, gap) in &[(30.0, 28.0, 80.0), (30.0, 20.0, 40.0), (20.0, 25.0, 90.0), (28.0, 28.0, 104.0)] {
            let c = FollowingGapContext::with_default_times(ve, vt, gap, 105.0, &tuning);
            assert!(c.t2 > c.t1 && c.t1 >= 0.0);
            let v = following_reference_speed(&c).unwrap();
            assert!(v >= vt - tuning.recovery_speed - 1e-9, "{ve} {vt} {gap} -> {v}");
            assert!(v <= vt + 1e-9);
        }
    }

    #[test]
    fn speed_law_directives() {
        let r = road();
        let ego = VehicleState::new(0, 0.0, 1.875, 20.0);
        let d = generate_directives(&report(&[(Law::A, Phase::Violation)]), &ctx(&r, &ego, None), &LawThresholds::default())
            .unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].reference, Some(22.0));
        assert_eq!(d[0].constraint, None);
        assert_eq!(d[0].paths, vec![TransitionPath::SpeedReference]);

        let d = generate_directives(
            &report(&[(Law::A, Phase::DecisionViolation)]),
            &ctx(&r, &ego, None),
            &LawThresholds::default(),
        )
        .unwrap();
        assert_eq!(d[0].paths, vec![TransitionPath::SpeedReference, TransitionPath::SpeedConstraint]);
        assert_eq!(d[0].constraint, Some(Interval::new(22.0, 33.0)));

        let d = generate_directives(&report(&[]), &ctx(&r, &ego, None), &LawThresholds::default()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].reference, None, "compliance only keeps the constraint");
        assert_eq!(d[0].paths, vec![TransitionPath::SpeedConstraint]);

        let d = generate_directives(&report(&[(Law::B, Phase::Violation)]), &ctx(&r, &ego, None), &LawThresholds::default())
            .unwrap();
        assert_eq!((d[0].source, d[0].reference), (Law::B, Some(33.0)));
    }

    #[test]
    fn left_lane_unsafe_directive() {
        let r = road();
        let ego = VehicleState::new(0, 0.0, 1.875, 25.0).with_size(4.5, 1.8);
        let mut rep = report(&[(Law::D, Phase::Violation)]);
        rep.initial_lane = Some(0);
        let d = generate_directives(&rep, &ctx(&r, &ego, None), &LawThresholds::default()).unwrap();
        let lat = d.iter().find(|d| d.variable == Variable::LateralPosition).unwrap();
        assert_eq!(lat.reference, Some(1.875));
        let c = lat.constraint.unwrap();
        assert!((c.lo - 0.9).abs() < 1e-12 && (c.hi - 2.85).abs() < 1e-12);
        assert_eq!(lat.paths, vec![TransitionPath::LateralReference, TransitionPath::LateralConstraint]);

        rep.initial_lane = None;
        assert!(generate_directives(&rep, &ctx(&r, &ego, None), &LawThresholds::default()).is_err());
    }

    #[test]
    fn overtaking_speed_directive() {
        let r = RoadModel::uniform(3.75, &[(10.0, 40.0), (10.0, 40.0)]).unwrap();
        let ego = VehicleState::new(0, 0.0, 5.625, 25.0);
        let mut rep = report(&[(Law::G, Phase::Violation)]);
        rep.overtaken = Some(TrackedVehicle { id: 9, vx: 20.0 });
        rep.overtake_lane = Some(1);
        let d = generate_directives(&rep, &ctx(&r, &ego, None), &LawThresholds::default()).unwrap();
        let speed = d.iter().find(|d| d.source == Law::G && d.variable == Variable::Speed).unwrap();
        assert_eq!(speed.reference, Some(35.0));
        let lat = d.iter().find(|d| d.variable == Variable::LateralPosition).unwrap();
        assert_eq!(lat.reference, Some(5.625));
        rep.overtake_lane = None;
        assert!(generate_directives(&rep, &ctx(&r, &ego, None), &LawThresholds::default()).is_err());
    }

    #[test]
    fn following_directive_uses_eq9_and_initial_lane() {
        let r = road();
        let ego = VehicleState::new(0, 0.0, 1.875, 30.0).with_size(4.0, 1.8);
        let lead = VehicleState::new(7, 84.0, 1.875, 28.0).with_size(4.0, 1.8);
        let mut rep = report(&[(Law::C, Phase::Violation)]);
        rep.initial_lane = Some(0);
        rep.following = Some(FollowingTrigger { lead: 7, compliance_distance: 105.0 });
        let d = generate_directives(&rep, &ctx(&r, &ego, Some(&lead)), &LawThresholds::default()).unwrap();
        let speed = d.iter().find(|d| d.source == Law::C && d.variable == Variable::Speed).unwrap();
        let expected = following_reference_speed(&FollowingGapContext::with_default_times(
            30.0,
            28.0,
            80.0,
            105.0,
            &FollowingTuning::default(),
        ))
        .unwrap();
        assert_eq!(speed.reference, Some(expected));
        let lat = d.iter().find(|d| d.source == Law::C && d.variable == Variable::LateralPosition).unwrap();
        assert_eq!(lat.reference, Some(1.875));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn phase() -> impl Strategy<Value = Phase> {
            prop_oneof![Just(Phase::Violation), Just(Phase::DecisionViolation), Just(Phase::Compliance)]
        }

        proptest! {
            #[test]
            fn directives_are_consistent(pa in phase(), pb in phase(), laws in 0u8..128,
                                         y in 0.2..11.0f64, v in 0.0..45.0f64, w in 1.5..2.5f64,
                                         init in 0usize..3, gap in 5.0..150.0f64, vt in 0.0..40.0f64) {
                let r = road();
                let ego = VehicleState::new(0, 0.0, y, v).with_size(4.5, w);
                let lead = VehicleState::new(1, gap + 4.5, y, vt).with_size(4.5, w);
                let mut rep = ViolationReport::default();
                if pb == Phase::Compliance || pa == Phase::Compliance {
                    rep.phase[0] = pa;
                    rep.phase[1] = if pa == Phase::Compliance { pb } else { Phase::Compliance };
                }
                for law in [Law::C, Law::D, Law::E, Law::F, Law::G] {
                    if laws & (1 << law.index()) != 0 {
                        rep.active.insert(law);
                        rep.phase[law.index()] = Phase::Violation;
                    }
                }
                rep.initial_lane = Some(init);
                rep.overtake_lane = Some(2);
                rep.overtaken = Some(TrackedVehicle { id: 1, vx: vt });
                rep.following = Some(FollowingTrigger { lead: 1, compliance_distance: 105.0 });
                let c = ctx(&r, &ego, Some(&lead));
                let d1 = generate_directives(&rep, &c, &LawThresholds::default()).unwrap();
                let d2 = generate_directives(&rep, &c, &LawThresholds::default()).unwrap();
                prop_assert_eq!(&d1, &d2);
                for d in &d1 {
                    let expect = ComplianceDirective::new(d.variable, d.reference, d.constraint, d.source);
                    prop_assert_eq!(&d.paths, &expect.paths);
                    if let (Some(r), Some(c)) = (d.reference, d.constraint) {
                        prop_assert!(c.contains(r, 1e-12), "{:?}", d);
                        if d.variable == Variable::LateralPosition {
                            prop_assert!(r > c.lo && r < c.hi);
                        }
                    }
                    if matches!(d.source, Law::A | Law::B) {
                        if let Some(r) = d.reference {
                            prop_assert!((22.0..=33.0).contains(&r));
                        }
                    }
                }
                if rep.active == LawSet::EMPTY && rep.phase(Law::A) == Phase::Compliance && rep.phase(Law::B) == Phase::Compliance {
                    prop_assert!(d1.iter().all(|d| d.reference.is_none()));
                }
            }
        }
    }

    #[test]
    fn slow_entry_into_a_faster_lane_is_held() {
        let r = RoadModel::uniform(3.75, &[(16.0, 33.0), (25.0, 33.0)]).unwrap();
        let th = LawThresholds::default();
        let mut rep = report(&[(Law::A, Phase::DecisionViolation)]);
        rep.speed_lane = Some(1);
        let ego = VehicleState::new(0, 0.0, 1.875, 20.0);
        let d = generate_directives(&rep, &ctx(&r, &ego, None), &th).unwrap();
        let speed = d.iter().find(|d| d.variable == Variable::Speed).unwrap();
        assert_eq!(speed.reference, Some(25.0));
        assert_eq!(speed.constraint, Some(Interval::new(25.0, 33.0)));
        let lat = d.iter().find(|d| d.variable == Variable::LateralPosition).unwrap();
        assert_eq!(lat.source, Law::A);
        assert_eq!(lat.reference, None);
        assert_eq!(lat.constraint, Some(Interval::new(0.9, 2.85)));

        let fast = VehicleState::new(0, 0.0, 1.875, 25.5);
        let d = generate_directives(&rep, &ctx(&r, &fast, None), &th).unwrap();
        assert!(d.iter().all(|d| d.variable == Variable::Speed));
    }
}
