//! Initial reference trajectories: what the motion planner would do without
//! any compliance intervention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RoadModel;

/// One sample of a reference trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

pub trait ReferenceSource {
    fn sample(&self, t: f64) -> RefSample;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantSpeedLaneCenter {
    x0: f64,
    t0: f64,
    y: f64,
    speed: f64,
}

impl ConstantSpeedLaneCenter {
    pub fn new(road: &RoadModel, lane: usize, speed: f64, x0: f64, t0: f64) -> Result<Self> {
        let l = road
            .lane(lane)
            .ok_or_else(|| Error::Scenario(format!("reference lane {lane} does not exist")))?;
        Ok(Self { x0, t0, y: l.center(), speed })
    }
}

impl ReferenceSource for ConstantSpeedLaneCenter {
    fn sample(&self, t: f64) -> RefSample {
        RefSample { t, x: self.x0 + self.speed * (t - self.t0), y: self.y, vx: self.speed, vy: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneChange {
    pub start: f64,
    pub duration: f64,
    pub to_lane: usize,
}

/// Constant speed with a sequence of smooth (half-cosine) lane changes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedLaneChange {
    x0: f64,
    speed: f64,
    start_y: f64,
    /// (start, duration, from_y, to_y)
    moves: Vec<(f64, f64, f64, f64)>,
}

impl ScriptedLaneChange {
    pub fn new(road: &RoadModel, speed: f64, start_lane: usize, changes: &[LaneChange], x0: f64) -> Result<Self> {
        let center = |lane: usize| {
            road.lane(lane)
                .map(|l| l.center())
                .ok_or_else(|| Error::Scenario(format!("reference lane {lane} does not exist")))
        };
        let start_y = center(start_lane)?;
        let mut from = start_y;
        let mut last_end = f64::NEG_INFINITY;
        let mut moves = Vec::with_capacity(changes.len());
        for c in changes {
            if !(c.duration > 0.0) || c.start < last_end {
                return Err(Error::Scenario("lane changes must have positive, non-overlapping windows".into()));
            }
            let to = center(c.to_lane)?;
            moves.push((c.start, c.duration, from, to));
            from = to;
            last_end = c.start + c.duration;
        }
        Ok(Self { x0, speed, start_y, moves })
    }
}

impl ReferenceSource for ScriptedLaneChange {
    fn sample(&self, t: f64) -> RefSample {
        let mut y = self.start_y;
        let mut vy = 0.0;
        for &(start, duration, from, to) in &self.moves {
            if t >= start + duration {
                y = to;
            } else if t > start {
                let s = (t - start) / duration;
                let phase = std::f64::consts::PI * s;
                y = from + (to - from) * 0.5 * (1.0 - phase.cos());
                vy = (to - from) * 0.5 * std::f64::consts::PI / duration * phase.sin();
                break;
            } else {
                break;
            }
        }
        RefSample { t, x: self.x0 + self.speed * t, y, vx: self.speed, vy }
    }
}

/// Linear interpolation between recorded samples; constant velocity beyond the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTrack {
    samples: Vec<RefSample>,
}

impl ReplayTrack {
    pub fn new(samples: Vec<RefSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Scenario("replay track has no samples".into()));
        }
        if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::Scenario("replay samples must have strictly increasing time".into()));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[RefSample] {
        &self.samples
    }

    pub fn start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }
}

impl ReferenceSource for ReplayTrack {
    fn sample(&self, t: f64) -> RefSample {
        let s = &self.samples;
        let first = s[0];
        let last = s[s.len() - 1];
        if t <= first.t {
            return RefSample { t, x: first.x + first.vx * (t - first.t), ..first };
        }
        if t >= last.t {
            return RefSample { t, x: last.x + last.vx * (t - last.t), ..last };
        }
        let i = s.partition_point(|p| p.t <= t);
        let (a, b) = (s[i - 1], s[i]);
        let w = (t - a.t) / (b.t - a.t);
        let lerp = |p: f64, q: f64| p + (q - p) * w;
        RefSample { t, x: lerp(a.x, b.x), y: lerp(a.y, b.y), vx: lerp(a.vx, b.vx), vy: lerp(a.vy, b.vy) }
    }
}

/// Serializable description of an initial reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum InitialReference {
    ReplayTrack { samples: Vec<RefSample> },
    ConstantSpeedLaneCenter { lane: usize, speed: f64 },
    ScriptedLaneChange { speed: f64, start_lane: usize, changes: Vec<LaneChange> },
}

/// An initial reference resolved against a road and a start position.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Replay(ReplayTrack),
    Constant(ConstantSpeedLaneCenter),
    Scripted(ScriptedLaneChange),
}

impl InitialReference {
    pub fn resolve(&self, road: &RoadModel, x0: f64) -> Result<Reference> {
        Ok(match self {
            InitialReference::ReplayTrack { samples } => Reference::Replay(ReplayTrack::new(samples.clone())?),
            InitialReference::ConstantSpeedLaneCenter { lane, speed } => {
                Reference::Constant(ConstantSpeedLaneCenter::new(road, *lane, *speed, x0, 0.0)?)
            }
            InitialReference::ScriptedLaneChange { speed, start_lane, changes } => {
                Reference::Scripted(ScriptedLaneChange::new(road, *speed, *start_lane, changes, x0)?)
            }
        })
    }
}

impl ReferenceSource for Reference {
    fn sample(&self, t: f64) -> RefSample {
        match self {
            Reference::Replay(r) => r.sample(t),
            Reference::Constant(r) => r.sample(t),
            Reference::Scripted(r) => r.sample(t),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_change_is_smooth() {
        let road = RoadModel::three_lane_expressway();
        let change = LaneChange { start: 2.0, duration: 4.0, to_lane: 1 };
        let r = ScriptedLaneChange::new(&road, 25.0, 0, &[change], 0.0).unwrap();
        assert_eq!(r.sample(1.0).y, 1.875);
        assert!((r.sample(4.0).y - 3.75).abs() < 1e-12);
        assert_eq!(r.sample(7.0).y, 5.625);
        // vy is the derivative of y
        let h = 1e-5;
        let fd = (r.sample(3.0 + h).y - r.sample(3.0 - h).y) / (2.0 * h);
        assert!((fd - r.sample(3.0).vy).abs() < 1e-6);
        assert!(ScriptedLaneChange::new(&road, 25.0, 0, &[change, change], 0.0).is_err());
    }

    #[test]
    fn replay_interpolates() {
        let s = |t: f64, x: f64| RefSample { t, x, y: 1.0, vx: 10.0, vy: 0.0 };
        let r = ReplayTrack::new(vec![s(0.0, 0.0), s(1.0, 10.0)]).unwrap();
        assert_eq!(r.sample(0.5).x, 5.0);
        assert_eq!(r.sample(2.0).x, 20.0);
        assert!(ReplayTrack::new(vec![s(1.0, 0.0), s(1.0, 1.0)]).is_err());
    }
}
