//! Highway traffic-law compliance: violation monitoring, compliance
//! directives, priority arbitration and constrained MPC tracking, plus a
//! deterministic closed-loop simulator and dataset tooling.

pub mod arbiter;
pub mod batch;
pub mod dataset;
pub mod error;
pub mod laws;
pub mod model;
pub mod mpc;
pub mod monitor;
pub mod reference;
pub mod scenario;
pub mod scenarios;
pub mod sim;
pub mod strategy;
pub mod synth;

pub use error::{Error, Result};
pub use laws::{Law, LawSet, Phase};
pub use model::{LawThresholds, Lane, RoadModel, VehicleId, VehicleState};
pub use monitor::{Intent, IntentKind, Monitor, ViolationReport};
pub use reference::{InitialReference, RefSample, Reference, ReferenceSource};
pub use strategy::{ComplianceDirective, Interval, TransitionPath, Variable};
pub use arbiter::{priority_of, resolve, PriorityModel, ResolvedPlan};
pub use scenario::Scenario;
pub use sim::{aggregate_stats, run, FrameLabel, LabelState, SimConfig, SimLog, Stats};
