//! Bundled demonstration scenarios on a three-lane expressway.

use crate::model::{LawThresholds, RoadModel, VehicleState};
use crate::reference::{InitialReference, LaneChange, RefSample};
use crate::scenario::{AccelPhase, Motion, Scenario, SurroundingSpec};

pub const DT: f64 = 0.05;

fn base(name: &str, ego: VehicleState, initial_ref: InitialReference, duration: f64) -> Scenario {
    Scenario {
        name: name.to_string(),
        road: RoadModel::three_lane_expressway(),
        thresholds: LawThresholds::default(),
        ego,
        initial_ref,
        surroundings: Vec::new(),
        intents: Vec::new(),
        duration,
        dt: DT,
        seed: 0,
    }
}

/// Ego 20% below the middle lane's minimum speed; the planner keeps the low
/// speed for a while before speeding up.
pub fn speed_limit() -> Scenario {
    let road = RoadModel::three_lane_expressway();
    let lane = road.lanes[1];
    let v0 = 0.8 * lane.v_min;
    let y = lane.center();
    let mut samples = Vec::new();
    let mut x = 0.0;
    let n = (20.0 / DT) as usize;
    for k in 0..=n {
        let t = k as f64 * DT;
        let vx = if t < 8.0 {
            v0
        } else if t < 12.0 {
            v0 + (28.0 - v0) * (t - 8.0) / 4.0
        } else {
            28.0
        };
        samples.push(RefSample { t, x, y, vx, vy: 0.0 });
        x += vx * DT;
    }
    base("speed-limit", VehicleState::new(0, 0.0, y, v0), InitialReference::ReplayTrack { samples }, 20.0)
}

/// Fast ego closing on a slower lead 80 m ahead.
pub fn following_distance() -> Scenario {
    let road = RoadModel::three_lane_expressway();
    let y = road.lanes[0].center();
    let ego = VehicleState::new(0, 0.0, y, 32.0);
    let mut sc = base(
        "following-distance",
        ego,
        InitialReference::ConstantSpeedLaneCenter { lane: 0, speed: 32.0 },
        40.0,
    );
    // 80 m bumper gap
    sc.surroundings.push(SurroundingSpec::constant(VehicleState::new(1, 80.0 + 4.5, y, 29.0)));
    sc
}

/// Planned left lane change with a vehicle 12 m behind in the target lane
/// that later drops back.
pub fn lane_change_abort() -> Scenario {
    let road = RoadModel::three_lane_expressway();
    let ego = VehicleState::new(0, 0.0, road.lanes[0].center(), 27.0);
    let mut sc = base(
        "lane-change-abort",
        ego,
        InitialReference::ScriptedLaneChange {
            speed: 27.0,
            start_lane: 0,
            changes: vec![LaneChange { start: 1.0, duration: 4.0, to_lane: 1 }],
        },
        20.0,
    );
    sc.surroundings.push(SurroundingSpec {
        init: VehicleState::new(1, -(12.0 + 4.5), road.lanes[1].center(), 27.0),
        motion: Motion::Scripted {
            accel: vec![AccelPhase { start: 5.0, accel: -3.0 }, AccelPhase { start: 8.0, accel: 0.0 }],
            lane_changes: vec![],
        },
    });
    sc
}

/// The left-rear vehicle speeds up while the ego starts a left lane change.
pub fn left_rear_accelerates() -> Scenario {
    let road = RoadModel::three_lane_expressway();
    let ego = VehicleState::new(0, 0.0, road.lanes[0].center(), 27.0);
    let mut sc = base(
        "left-rear-accelerates",
        ego,
        InitialReference::ScriptedLaneChange {
            speed: 27.0,
            start_lane: 0,
            changes: vec![LaneChange { start: 2.0, duration: 4.0, to_lane: 1 }],
        },
        35.0,
    );
    // 20 m behind, then 4 m/s^2 for 2 s: the gap and TTC collapse right as the change starts
    sc.surroundings.push(SurroundingSpec {
        init: VehicleState::new(1, -(20.0 + 4.5), road.lanes[1].center(), 27.0),
        motion: Motion::Scripted {
            accel: vec![AccelPhase { start: 1.0, accel: 4.0 }, AccelPhase { start: 3.0, accel: 0.0 }],
            lane_changes: vec![],
        },
    });
    sc
}

/// Overtaking a slow truck; the planner returns to the original lane before
/// the required speed difference is reached.
pub fn overtaking() -> Scenario {
    let road = RoadModel::three_lane_expressway();
    let y0 = road.lanes[0].center();
    let ego = VehicleState::new(0, 0.0, y0, 26.0);
    let mut sc = base(
        "overtaking",
        ego,
        InitialReference::ScriptedLaneChange {
            speed: 26.0,
            start_lane: 0,
            changes: vec![
                LaneChange { start: 0.5, duration: 3.0, to_lane: 1 },
                LaneChange { start: 8.0, duration: 3.0, to_lane: 0 },
            ],
        },
        25.0,
    );
    sc.surroundings.push(SurroundingSpec::constant(VehicleState::new(1, 90.0 + 8.25, y0, 15.0).with_size(12.0, 2.5)));
    sc
}

pub fn all() -> Vec<Scenario> {
    vec![speed_limit(), following_distance(), lane_change_abort(), left_rear_accelerates(), overtaking()]
}
