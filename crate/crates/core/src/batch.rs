//! Dataset evaluation shared by the command line: every recorded vehicle that
//! passes the lane filter becomes one ego run, replayed without the stack
//! (audit) or driven by it (evaluation).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{extract_runs, preprocess_scale, ExtractOptions, TrackFile};
use crate::error::{Error, Result};
use crate::model::VehicleId;
use crate::scenario::Scenario;
use crate::sim::{self, aggregate_stats, SimConfig, SimLog, Stats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOptions {
    pub extract: ExtractOptions,
    /// Longitudinal stretch applied before extraction (1 = as recorded).
    pub scale: f64,
    pub sim: SimConfig,
}

impl Default for BatchOptions {
    fn default() -> Self {
        let extract = ExtractOptions::default();
        Self { sim: SimConfig::new(extract.dt), extract, scale: 1.0 }
    }
}

impl BatchOptions {
    pub fn validate(&self) -> Result<()> {
        if (self.extract.dt - self.sim.mpc.dt).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "extraction step {} differs from controller step {}",
                self.extract.dt, self.sim.mpc.dt
            )));
        }
        self.extract.thresholds.validate()?;
        self.sim.mpc.validate()
    }

    fn config(&self, compliance: bool) -> SimConfig {
        SimConfig { compliance, ..self.sim }
    }
}

/// One ego run taken from a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub source: String,
    pub vehicle: VehicleId,
    pub scenario: Scenario,
}

/// Scales a recording and cuts it into ego runs. Returns the runs and the
/// reasons for skipped vehicles.
pub fn prepare(source: &str, tf: &TrackFile, opts: &BatchOptions) -> Result<(Vec<Run>, Vec<String>)> {
    let tf = if opts.scale == 1.0 { tf.clone() } else { preprocess_scale(tf, opts.scale)? };
    let ex = extract_runs(&tf, &opts.extract)?;
    let runs = ex
        .runs
        .into_iter()
        .map(|(vehicle, scenario)| Run { source: source.to_string(), vehicle, scenario })
        .collect();
    Ok((runs, ex.skipped))
}

fn simulate_all(runs: &[Run], cfg: &SimConfig) -> Vec<Result<SimLog>> {
    runs.par_iter().map(|r| sim::run(&r.scenario, cfg)).collect()
}

/// Labels the recorded trajectories: the stack is off and the ego replays
/// its own track. Results are in the order of `runs`.
pub fn audit(runs: &[Run], opts: &BatchOptions) -> Vec<Result<SimLog>> {
    simulate_all(runs, &opts.config(false))
}

/// Drives every run with the compliance stack.
pub fn evaluate(runs: &[Run], opts: &BatchOptions) -> Vec<Result<SimLog>> {
    simulate_all(runs, &opts.config(true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vehicle: Option<VehicleId>,
    pub error: String,
}

/// Aggregates successful logs and collects the failures.
pub fn summarize<'a>(runs: &'a [Run], results: &'a [Result<SimLog>]) -> (Stats, Vec<Failure>) {
    let failures = runs
        .iter()
        .zip(results)
        .filter_map(|(r, res)| {
            res.as_ref().err().map(|e| Failure { source: r.source.clone(), vehicle: Some(r.vehicle), error: e.to_string() })
        })
        .collect();
    (aggregate_stats(results.iter().filter_map(|r| r.as_ref().ok())), failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LaneFilter;
    use crate::sim::LabelState;
    use crate::synth::{generate, SynthConfig};

    fn small() -> TrackFile {
        generate(&SynthConfig { duration: 12.0, vehicles_per_lane: 4, ..SynthConfig::default() })
    }

    #[test]
    fn audit_matches_sequential_disabled_runs() {
        let opts = BatchOptions { scale: 2.0, ..Default::default() };
        let (runs, _) = prepare("f", &small(), &opts).unwrap();
        assert!(!runs.is_empty());
        let par = audit(&runs, &opts);
        for (r, log) in runs.iter().zip(&par) {
            let seq = sim::run_default(&r.scenario, false).unwrap();
            assert_eq!(log.as_ref().unwrap(), &seq);
        }
    }

    #[test]
    fn evaluation_never_adds_active_frames() {
        let opts = BatchOptions {
            scale: 2.0,
            extract: ExtractOptions { lane_filter: LaneFilter::Leftmost, ..Default::default() },
            ..Default::default()
        };
        let (runs, _) = prepare("f", &small(), &opts).unwrap();
        let after = evaluate(&runs, &opts);
        let (stats, failures) = summarize(&runs, &after);
        assert!(failures.is_empty());
        assert_eq!(stats.counts[LabelState::ActiveViolation.as_str()], 0);
    }

    #[test]
    fn step_mismatch_is_rejected() {
        let mut opts = BatchOptions::default();
        opts.extract.dt = 0.1;
        assert!(matches!(opts.validate(), Err(Error::Config(_))));
        assert!(BatchOptions::default().validate().is_ok());
    }
}
