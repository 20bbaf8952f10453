//! Fixtures shared by the benchmarks.

use roadlaw_core::arbiter::resolve;
use roadlaw_core::mpc::{MpcConfig, VehicleParams};
use roadlaw_core::reference::ConstantSpeedLaneCenter;
use roadlaw_core::{ComplianceDirective, Interval, Law, ResolvedPlan, RoadModel, Variable, VehicleState};

pub struct Tracking {
    pub cfg: MpcConfig,
    pub params: VehicleParams,
    pub reference: ConstantSpeedLaneCenter,
    pub ego: VehicleState,
}

/// Ego near the left edge of the right lane while the planner heads for the
/// middle lane at 25 m/s.
pub fn tracking(np: usize, nc: usize) -> Tracking {
    let road = RoadModel::three_lane_expressway();
    let params = VehicleParams::default();
    Tracking {
        cfg: MpcConfig { np, nc, ..MpcConfig::for_vehicle(&params, 0.05) },
        reference: ConstantSpeedLaneCenter::new(&road, 1, 25.0, 0.0, 0.0).expect("valid lane"),
        params,
        ego: VehicleState::new(0, 0.0, 3.2, 24.0),
    }
}

/// No directives: plain reference tracking.
pub fn free_plan() -> ResolvedPlan {
    ResolvedPlan::default()
}

/// A lateral hold in the right lane plus a speed band, both binding.
pub fn constrained_plan() -> ResolvedPlan {
    resolve(&[
        ComplianceDirective::new(Variable::LateralPosition, Some(1.875), Some(Interval::new(0.9, 2.85)), Law::D),
        ComplianceDirective::new(Variable::Speed, None, Some(Interval::new(16.7, 22.0)), Law::A),
    ])
}
