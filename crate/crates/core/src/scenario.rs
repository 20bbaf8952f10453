//! Scenario description: road, ego start, the planner's initial reference
//! and non-reactive surrounding traffic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{lane_of, LawThresholds, RoadModel, VehicleState};
use crate::monitor::{Intent, IntentKind};
use crate::reference::{InitialReference, LaneChange, RefSample, ReferenceSource, ReplayTrack};

/// Constant acceleration from `start` until the next phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelPhase {
    pub start: f64,
    pub accel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Motion {
    /// Piecewise-constant acceleration and smooth lane changes.
    Scripted {
        #[serde(default)]
        accel: Vec<AccelPhase>,
        #[serde(default)]
        lane_changes: Vec<LaneChange>,
    },
    /// Recorded samples; the vehicle exists only inside the recorded window.
    Replay { samples: Vec<RefSample> },
}

impl Default for Motion {
    fn default() -> Self {
        Motion::Scripted { accel: Vec::new(), lane_changes: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurroundingSpec {
    pub init: VehicleState,
    #[serde(default)]
    pub motion: Motion,
}

impl SurroundingSpec {
    pub fn constant(init: VehicleState) -> Self {
        Self { init, motion: Motion::default() }
    }
}

/// Behavioral-layer intent over a time window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentWindow {
    pub start: f64,
    pub end: f64,
    pub kind: IntentKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub road: RoadModel,
    #[serde(default)]
    pub thresholds: LawThresholds,
    pub ego: VehicleState,
    pub initial_ref: InitialReference,
    #[serde(default)]
    pub surroundings: Vec<SurroundingSpec>,
    /// Optional intent stream; when empty the intent is read off the
    /// initial reference.
    #[serde(default)]
    pub intents: Vec<IntentWindow>,
    pub duration: f64,
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.road.validate()?;
        self.thresholds.validate()?;
        self.ego.validate()?;
        if !(self.dt > 0.0) {
            return Err(Error::Scenario("dt must be positive".into()));
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(Error::Scenario("duration must be finite and non-negative".into()));
        }
        if lane_of(self.ego.y, &self.road).is_none() {
            return Err(Error::Scenario("ego starts off the road".into()));
        }
        for s in &self.surroundings {
            s.init.validate()?;
            match &s.motion {
                Motion::Scripted { lane_changes, .. } => {
                    if lane_of(s.init.y, &self.road).is_none() {
                        return Err(Error::Scenario(format!("vehicle {} starts off the road", s.init.id)));
                    }
                    for c in lane_changes {
                        if c.to_lane >= self.road.lane_count() || !(c.duration > 0.0) {
                            return Err(Error::Scenario(format!("vehicle {} has an invalid lane change", s.init.id)));
                        }
                    }
                }
                Motion::Replay { samples } => {
                    ReplayTrack::new(samples.clone())?;
                }
            }
            if s.init.id == self.ego.id {
                return Err(Error::Scenario(format!("vehicle id {} is used by the ego", s.init.id)));
            }
        }
        for w in &self.intents {
            if !(w.end >= w.start) {
                return Err(Error::Scenario("intent windows must have end >= start".into()));
            }
        }
        self.initial_ref.resolve(&self.road, self.ego.x)?;
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize
    }

    /// External intent at `t`, if the scenario carries an intent stream.
    pub fn intent_at(&self, t: f64) -> Option<Intent> {
        if self.intents.is_empty() {
            return None;
        }
        let w = self.intents.iter().find(|w| t >= w.start - 1e-9 && t <= w.end + 1e-9);
        Some(w.map_or(Intent::NONE, |w| Intent::new(w.kind, w.start)))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

/// Time-stepped state of one surrounding vehicle.
#[derive(Debug, Clone)]
pub struct SurroundingRuntime {
    spec: SurroundingSpec,
    replay: Option<ReplayTrack>,
    lane_centers: Vec<f64>,
    pub state: VehicleState,
    pub present: bool,
    lc_from: Option<f64>,
}

impl SurroundingRuntime {
    pub fn new(spec: &SurroundingSpec, road: &RoadModel, t0: f64) -> Result<Self> {
        let replay = match &spec.motion {
            Motion::Replay { samples } => Some(ReplayTrack::new(samples.clone())?),
            Motion::Scripted { .. } => None,
        };
        let mut rt = Self {
            spec: spec.clone(),
            replay,
            lane_centers: road.lanes.iter().map(|l| l.center()).collect(),
            state: spec.init,
            present: true,
            lc_from: None,
        };
        if rt.replay.is_some() {
            rt.place_replay(t0);
        }
        Ok(rt)
    }

    fn place_replay(&mut self, t: f64) {
        let track = self.replay.as_ref().expect("replay track");
        let r = track.sample(t);
        self.present = t >= track.start() - 1e-9 && t <= track.end() + 1e-9;
        self.state = VehicleState { x: r.x, y: r.y, vx: r.vx, vy: r.vy, yaw: 0.0, yaw_rate: 0.0, ..self.spec.init };
    }

    /// Advances from `t` to `t + dt`.
    pub fn advance(&mut self, t: f64, dt: f64) {
        if self.replay.is_some() {
            self.place_replay(t + dt);
            return;
        }
        let Motion::Scripted { accel, lane_changes } = &self.spec.motion else { unreachable!() };
        let a = accel.iter().rev().find(|p| p.start <= t + 1e-9).map_or(0.0, |p| p.accel);
        let s = &mut self.state;
        if s.vx + a * dt < 0.0 {
            // stops within the tick
            let tau = if a < 0.0 { -s.vx / a } else { 0.0 };
            s.x += s.vx * tau + 0.5 * a * tau * tau;
            s.vx = 0.0;
        } else {
            s.x += s.vx * dt + 0.5 * a * dt * dt;
            s.vx += a * dt;
        }
        let t1 = t + dt;
        let active = lane_changes.iter().find(|c| t1 > c.start && t1 < c.start + c.duration + dt);
        match active {
            Some(c) => {
                let from = *self.lc_from.get_or_insert(s.y);
                let to = self.lane_centers[c.to_lane];
                let u = ((t1 - c.start) / c.duration).min(1.0);
                let ph = std::f64::consts::PI * u;
                s.y = from + (to - from) * 0.5 * (1.0 - ph.cos());
                s.vy = if u < 1.0 { (to - from) * 0.5 * std::f64::consts::PI / c.duration * ph.sin() } else { 0.0 };
                if u >= 1.0 {
                    self.lc_from = None;
                }
            }
            None => {
                self.lc_from = None;
                s.vy = 0.0;
            }
        }
    }
}
