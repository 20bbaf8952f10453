//! Geometric and kinematic vocabulary shared by every layer: vehicle states,
//! straight multi-lane roads, bumper gaps, longitudinal time-to-collision and
//! lane membership.
//!
//! Coordinates are road aligned: `x` grows along the direction of travel and
//! `y` grows to the left, so lane 0 is the rightmost lane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type VehicleId = u64;

/// Converts a speed in km/h to m/s.
pub fn kmh(v: f64) -> f64 {
    v / 3.6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    /// Longitudinal position of the geometric center (m).
    pub x: f64,
    /// Lateral position of the geometric center (m, positive left).
    pub y: f64,
    /// Longitudinal speed (m/s).
    pub vx: f64,
    /// Lateral speed in the body frame (m/s, positive left).
    pub vy: f64,
    /// Heading relative to the road direction (rad).
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub yaw_rate: f64,
    pub length: f64,
    pub width: f64,
}

impl VehicleState {
    pub fn new(id: VehicleId, x: f64, y: f64, vx: f64) -> Self {
        Self {
            id,
            x,
            y,
            vx,
            vy: 0.0,
            yaw: 0.0,
            yaw_rate: 0.0,
            length: 4.5,
            width: 1.8,
        }
    }

    pub fn with_size(mut self, length: f64, width: f64) -> Self {
        self.length = length;
        self.width = width;
        self
    }

    pub fn with_vy(mut self, vy: f64) -> Self {
        self.vy = vy;
        self
    }

    /// Lateral speed in the road frame, i.e. the rate of change of `y`.
    pub fn lateral_speed(&self) -> f64 {
        self.vy * self.yaw.cos() + self.vx * self.yaw.sin()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.vx, self.vy, self.yaw, self.yaw_rate]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidState(format!("vehicle {} has a non-finite field", self.id)));
        }
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(Error::InvalidState(format!(
                "vehicle {} must have positive length and width",
                self.id
            )));
        }
        if self.vx < 0.0 {
            return Err(Error::InvalidState(format!("vehicle {} is reversing", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    /// Lateral coordinate of the right lane line.
    pub y_right: f64,
    /// Lateral coordinate of the left lane line.
    pub y_left: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Lane {
    pub fn center(&self) -> f64 {
        0.5 * (self.y_left + self.y_right)
    }

    pub fn width(&self) -> f64 {
        self.y_left - self.y_right
    }
}

/// A straight road whose lanes are ordered from right (index 0) to left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadModel {
    pub lanes: Vec<Lane>,
}

impl RoadModel {
    pub fn new(lanes: Vec<Lane>) -> Result<Self> {
        let road = Self { lanes };
        road.validate()?;
        Ok(road)
    }

    /// Equal-width lanes starting at `y = 0`, each with its own speed band.
    pub fn uniform(lane_width: f64, limits: &[(f64, f64)]) -> Result<Self> {
        let lanes = limits
            .iter()
            .enumerate()
            .map(|(i, &(v_min, v_max))| Lane {
                y_right: i as f64 * lane_width,
                y_left: (i + 1) as f64 * lane_width,
                v_min,
                v_max,
            })
            .collect();
        Self::new(lanes)
    }

    /// Three 3.75 m lanes with the usual expressway bands:
    /// 60-120, 90-120 and 110-120 km/h from right to left.
    pub fn three_lane_expressway() -> Self {
        Self::uniform(3.75, &[(kmh(60.0), kmh(120.0)), (kmh(90.0), kmh(120.0)), (kmh(110.0), kmh(120.0))])
            .expect("static road is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.lanes.is_empty() {
            return Err(Error::InvalidRoad("road has no lanes".into()));
        }
        for (i, lane) in self.lanes.iter().enumerate() {
            if !(lane.y_left > lane.y_right) {
                return Err(Error::InvalidRoad(format!("lane {i} has y_left <= y_right")));
            }
            if !(lane.v_min >= 0.0 && lane.v_min < lane.v_max) {
                return Err(Error::InvalidRoad(format!("lane {i} needs 0 <= v_min < v_max")));
            }
            if i > 0 && (lane.y_right - self.lanes[i - 1].y_left).abs() > 1e-9 {
                return Err(Error::InvalidRoad(format!(
                    "lanes {} and {i} are not contiguous",
                    i - 1
                )));
            }
        }
        Ok(())
    }

    pub fn lane(&self, index: usize) -> Option<&Lane> {
        self.lanes.get(index)
    }

    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    /// Lateral coordinates of the lines shared by two lanes.
    pub fn interior_lines(&self) -> impl Iterator<Item = f64> + '_ {
        self.lanes.iter().skip(1).map(|l| l.y_right)
    }

    pub fn y_min(&self) -> f64 {
        self.lanes[0].y_right
    }

    pub fn y_max(&self) -> f64 {
        self.lanes[self.lanes.len() - 1].y_left
    }
}

/// Thresholds used to decide compliance. Speeds are in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LawThresholds {
    /// Minimum admissible longitudinal time to collision (s).
    pub ttcx_min: f64,
    /// Minimum bumper distance to a vehicle in the target lane (m).
    pub d_clmin: f64,
    /// Maximum time spent on a lane line (s).
    pub t_max_cl: f64,
    /// Required overtaking speed difference (m/s).
    pub dv_ot: f64,
    pub follow_dist_fast: f64,
    pub follow_dist_slow: f64,
    /// Speed above which `follow_dist_fast` applies.
    pub follow_speed_break: f64,
    /// Lateral speed that signals a lane-change intent.
    pub lat_intent_speed: f64,
    /// Time-to-collision horizon of the overtaking trigger (s).
    pub ttc_overtake: f64,
    /// Exit distance of the following-distance hysteresis (fast regime).
    pub hysteresis_d: f64,
}

impl Default for LawThresholds {
    fn default() -> Self {
        Self {
            ttcx_min: 2.3,
            d_clmin: 14.0,
            t_max_cl: 6.0,
            dv_ot: 15.0,
            follow_dist_fast: 100.0,
            follow_dist_slow: 50.0,
            follow_speed_break: kmh(100.0),
            lat_intent_speed: 0.25,
            ttc_overtake: 20.0,
            hysteresis_d: 105.0,
        }
    }
}

impl LawThresholds {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.ttcx_min,
            self.d_clmin,
            self.t_max_cl,
            self.dv_ot,
            self.follow_dist_fast,
            self.follow_dist_slow,
            self.follow_speed_break,
            self.lat_intent_speed,
            self.ttc_overtake,
            self.hysteresis_d,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidThresholds("all thresholds must be strictly positive".into()));
        }
        if self.follow_dist_fast <= self.follow_dist_slow {
            return Err(Error::InvalidThresholds(
                "follow_dist_fast must exceed follow_dist_slow".into(),
            ));
        }
        if self.hysteresis_d < self.follow_dist_fast {
            return Err(Error::InvalidThresholds(
                "hysteresis_d must not be below follow_dist_fast".into(),
            ));
        }
        Ok(())
    }

    /// Required following distance for a given ego speed.
    pub fn follow_distance(&self, ego_vx: f64) -> f64 {
        if ego_vx > self.follow_speed_break {
            self.follow_dist_fast
        } else {
            self.follow_dist_slow
        }
    }

    /// Distance that ends a following-distance violation. The fast regime
    /// uses `hysteresis_d`; the slow regime gets the same additive margin.
    pub fn follow_exit_distance(&self, ego_vx: f64) -> f64 {
        self.follow_distance(ego_vx) + (self.hysteresis_d - self.follow_dist_fast)
    }
}

/// Bumper-to-bumper gap from `ego` to `tgt`, positive when `tgt` is ahead and clear.
pub fn longitudinal_gap(ego: &VehicleState, tgt: &VehicleState) -> f64 {
    (tgt.x - ego.x) - 0.5 * (tgt.length + ego.length)
}

/// Time until the bumper gap between the two vehicles closes at constant
/// longitudinal speeds, or `None` when they are not closing.
pub fn ttcx(ego: &VehicleState, tgt: &VehicleState) -> Option<f64> {
    let (rear, front) = if tgt.x >= ego.x { (ego, tgt) } else { (tgt, ego) };
    let closing = rear.vx - front.vx;
    if closing <= 0.0 {
        return None;
    }
    Some(longitudinal_gap(rear, front) / closing)
}

/// Index of the lane whose `[y_right, y_left)` interval contains `y`.
pub fn lane_of(y: f64, road: &RoadModel) -> Option<usize> {
    road.lanes.iter().position(|l| y >= l.y_right && y < l.y_left)
}

/// True when the vehicle footprint straddles the line at `line_y`.
pub fn overlaps_lane_line(ego: &VehicleState, line_y: f64) -> bool {
    (ego.y - line_y).abs() < 0.5 * ego.width
}

/// True when the footprint straddles any line shared by two lanes.
pub fn on_any_lane_line(ego: &VehicleState, road: &RoadModel) -> bool {
    road.interior_lines().any(|line| overlaps_lane_line(ego, line))
}

/// Lane of the vehicle center and whether the footprint is fully inside it.
pub fn fully_inside_lane(ego: &VehicleState, road: &RoadModel) -> Option<usize> {
    let lane = lane_of(ego.y, road)?;
    let l = &road.lanes[lane];
    let half = 0.5 * ego.width;
    (ego.y - half >= l.y_right && ego.y + half <= l.y_left).then_some(lane)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car(x: f64, vx: f64) -> VehicleState {
        VehicleState::new(1, x, 1.875, vx).with_size(4.0, 1.8)
    }

    #[test]
    fn gap_examples() {
        assert_eq!(longitudinal_gap(&car(0.0, 0.0), &car(50.0, 0.0)), 46.0);
        assert_eq!(longitudinal_gap(&car(0.0, 0.0), &car(0.0, 0.0)), -4.0);
        let th = LawThresholds::default();
        let gap = longitudinal_gap(&car(0.0, 0.0), &car(104.0, 0.0));
        assert_eq!(gap, 100.0);
        // exactly at the fast-lane threshold: "< 100" is false, one millimetre closer it is true
        assert!(!(gap < th.follow_dist_fast));
        assert!(longitudinal_gap(&car(0.0, 0.0), &car(103.999, 0.0)) < th.follow_dist_fast);
    }

    #[test]
    fn ttcx_examples() {
        let t = ttcx(&car(0.0, 30.0), &car(50.0, 10.0)).unwrap();
        assert!((t - 2.3).abs() < 1e-12);
        assert_eq!(ttcx(&car(0.0, 20.0), &car(50.0, 20.0)), None);
        assert_eq!(ttcx(&car(0.0, 10.0), &car(50.0, 20.0)), None);
        // symmetric in argument order
        assert_eq!(ttcx(&car(50.0, 10.0), &car(0.0, 30.0)), Some(t));
    }

    #[test]
    fn lane_membership() {
        let road = RoadModel::three_lane_expressway();
        assert_eq!(lane_of(1.875, &road), Some(0));
        assert_eq!(lane_of(5.625, &road), Some(1));
        assert_eq!(lane_of(3.75, &road), Some(1), "shared line belongs to the left lane");
        assert_eq!(lane_of(0.0, &road), Some(0));
        assert_eq!(lane_of(11.25, &road), None);
        assert_eq!(lane_of(-0.1, &road), None);
    }

    #[test]
    fn line_overlap() {
        let mut ego = car(0.0, 20.0);
        ego.y = 3.75;
        assert!(overlaps_lane_line(&ego, 3.75));
        ego.y = 3.75 + 0.9;
        assert!(!overlaps_lane_line(&ego, 3.75));
        ego.y = 3.75 + 3.75;
        assert!(!overlaps_lane_line(&ego, 3.75));
    }

    #[test]
    fn road_validation() {
        assert!(RoadModel::new(vec![]).is_err());
        let bad = Lane { y_right: 1.0, y_left: 0.0, v_min: 0.0, v_max: 1.0 };
        assert!(RoadModel::new(vec![bad]).is_err());
        let gap = vec![
            Lane { y_right: 0.0, y_left: 3.0, v_min: 0.0, v_max: 1.0 },
            Lane { y_right: 3.5, y_left: 6.0, v_min: 0.0, v_max: 1.0 },
        ];
        assert!(RoadModel::new(gap).is_err());
        let speeds = Lane { y_right: 0.0, y_left: 3.0, v_min: 5.0, v_max: 5.0 };
        assert!(RoadModel::new(vec![speeds]).is_err());
    }

    #[test]
    fn thresholds_default_valid() {
        let th = LawThresholds::default();
        th.validate().unwrap();
        assert!((th.follow_speed_break - 27.7777777).abs() < 1e-6);
        assert_eq!(th.follow_exit_distance(30.0), 105.0);
        assert_eq!(th.follow_exit_distance(20.0), 55.0);
        let mut bad = th;
        bad.follow_dist_slow = 120.0;
        assert!(bad.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gap_both_directions(ax in -500.0..500.0f64, bx in -500.0..500.0f64,
                                   la in 1.0..20.0f64, lb in 1.0..20.0f64) {
                let a = VehicleState::new(1, ax, 0.0, 0.0).with_size(la, 1.8);
                let b = VehicleState::new(2, bx, 0.0, 0.0).with_size(lb, 1.8);
                let l = 0.5 * (la + lb);
                prop_assert!((longitudinal_gap(&a, &b) - ((bx - ax) - l)).abs() < 1e-9);
                prop_assert!((longitudinal_gap(&b, &a) - ((ax - bx) - l)).abs() < 1e-9);
            }

            #[test]
            fn ttcx_closes_gap(ex in 0.0..100.0f64, dx in 5.0..200.0f64,
                               ev in 0.0..40.0f64, tv in 0.0..40.0f64) {
                let ego = VehicleState::new(1, ex, 0.0, ev);
                let tgt = VehicleState::new(2, ex + dx, 0.0, tv);
                if let Some(t) = ttcx(&ego, &tgt) {
                    let mut e = ego;
                    let mut g = tgt;
                    e.x += ev * t;
                    g.x += tv * t;
                    prop_assert!(longitudinal_gap(&e, &g).abs() < 1e-9 * (1.0 + dx));
                } else {
                    prop_assert!(ev <= tv);
                }
            }

            #[test]
            fn lanes_partition_road(y in 0.0..11.25f64) {
                let road = RoadModel::three_lane_expressway();
                let hits = road.lanes.iter().filter(|l| y >= l.y_right && y < l.y_left).count();
                prop_assert_eq!(hits, 1);
                prop_assert!(lane_of(y, &road).is_some());
            }
        }
    }
}
