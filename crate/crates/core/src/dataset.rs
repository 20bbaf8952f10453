//! Drone-dataset track files: parsing, scaling and extraction of ego runs.
//!
//! A track file is a CSV with the header
//! `frame,id,x,y,xVelocity,yVelocity,laneId,width,length` and a JSON sidecar
//! holding the frame rate, the lane lines and the per-lane speed limits.
//! Lane lines are listed from right to left; `laneId` is 1-based in the same
//! order and 0 means off the road.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{lane_of, Lane, LawThresholds, RoadModel, VehicleId, VehicleState};
use crate::monitor::{detect_intent, IntentKind};
use crate::reference::{InitialReference, RefSample};
use crate::scenario::{IntentWindow, Motion, Scenario, SurroundingSpec};

pub const HEADER: [&str; 9] = ["frame", "id", "x", "y", "xVelocity", "yVelocity", "laneId", "width", "length"];

/// Speeds above this are treated as unit errors (m/s).
pub const MAX_PLAUSIBLE_SPEED: f64 = 80.0;

/// Share of frames whose recorded lane must agree with the geometry.
pub const LANE_AGREEMENT: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub frame: u64,
    pub id: VehicleId,
    pub x: f64,
    pub y: f64,
    #[serde(rename = "xVelocity")]
    pub vx: f64,
    #[serde(rename = "yVelocity")]
    pub vy: f64,
    #[serde(rename = "laneId")]
    pub lane_id: u32,
    pub width: f64,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedLimit {
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackMeta {
    pub frame_rate: f64,
    pub lane_lines: Vec<f64>,
    pub speed_limits: Vec<SpeedLimit>,
}

impl TrackMeta {
    pub fn road(&self) -> Result<RoadModel> {
        if self.lane_lines.len() != self.speed_limits.len() + 1 {
            return Err(Error::Dataset(format!(
                "{} lane lines need {} speed limits, got {}",
                self.lane_lines.len(),
                self.lane_lines.len().saturating_sub(1),
                self.speed_limits.len()
            )));
        }
        let lanes = self
            .lane_lines
            .windows(2)
            .zip(&self.speed_limits)
            .map(|(w, s)| Lane { y_right: w[0], y_left: w[1], v_min: s.v_min, v_max: s.v_max })
            .collect();
        RoadModel::new(lanes).map_err(|e| Error::Dataset(e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0) || !self.frame_rate.is_finite() {
            return Err(Error::Dataset("frame_rate must be positive".into()));
        }
        self.road().map(|_| ())
    }
}

/// A row that was dropped while parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line number in the CSV, header included.
    pub line: u64,
    pub id: Option<VehicleId>,
    pub frame: Option<u64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackFile {
    pub meta: TrackMeta,
    /// Per vehicle, frames in increasing order.
    pub tracks: BTreeMap<VehicleId, Vec<TrackRecord>>,
    pub rejected: Vec<RejectedRow>,
}

/// Sidecar path for a track CSV: `run.csv` -> `run.meta.json`.
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

/// Reads a track CSV and its sidecar next to it.
pub fn parse(path: &Path) -> Result<TrackFile> {
    let meta_file = meta_path(path);
    let meta: TrackMeta = serde_json::from_str(&std::fs::read_to_string(&meta_file).map_err(|e| {
        Error::Dataset(format!("cannot read metadata {}: {e}", meta_file.display()))
    })?)?;
    let file = std::fs::File::open(path)?;
    parse_reader(file, meta)
}

pub fn parse_reader<R: Read>(reader: R, meta: TrackMeta) -> Result<TrackFile> {
    meta.validate()?;
    let road = meta.road()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col = [0usize; 9];
    for (i, name) in HEADER.iter().enumerate() {
        col[i] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| Error::Dataset(format!("missing column '{name}'")))?;
    }

    let mut tracks: BTreeMap<VehicleId, Vec<TrackRecord>> = BTreeMap::new();
    let mut rejected = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut line = 1u64;
    while rdr.read_record(&mut record)? {
        line += 1;
        let field = |i: usize| record.get(col[i]).unwrap_or("");
        let id = field(1).parse::<VehicleId>().ok();
        let frame = field(0).parse::<u64>().ok();
        let mut reject = |reason: String| rejected.push(RejectedRow { line, id, frame, reason });
        let (Some(id), Some(frame)) = (id, frame) else {
            reject("frame and id must be non-negative integers".into());
            continue;
        };
        let mut vals = [0.0; 6];
        let mut bad = None;
        for (k, i) in [2, 3, 4, 5, 7, 8].into_iter().enumerate() {
            match field(i).parse::<f64>() {
                Ok(v) if v.is_finite() => vals[k] = v,
                _ => {
                    bad = Some(format!("{} is not a finite number: '{}'", HEADER[i], field(i)));
                    break;
                }
            }
        }
        if let Some(reason) = bad {
            reject(reason);
            continue;
        }
        let Ok(lane_id) = field(6).parse::<u32>() else {
            reject(format!("laneId is not a lane number: '{}'", field(6)));
            continue;
        };
        let [x, y, vx, vy, width, length] = vals;
        if vx.abs() > MAX_PLAUSIBLE_SPEED {
            reject(format!("xVelocity {vx} m/s is implausible"));
            continue;
        }
        if !(width > 0.0 && length > 0.0) {
            reject("width and length must be positive".into());
            continue;
        }
        tracks.entry(id).or_default().push(TrackRecord { frame, id, x, y, vx, vy, lane_id, width, length });
    }

    check_contiguity(&tracks, &rejected)?;
    check_lanes(&tracks, &road)?;
    Ok(TrackFile { meta, tracks, rejected })
}

/// Frames must increase by one per row, except across rejected rows of the
/// same vehicle.
fn check_contiguity(tracks: &BTreeMap<VehicleId, Vec<TrackRecord>>, rejected: &[RejectedRow]) -> Result<()> {
    let dropped: BTreeSet<(VehicleId, u64)> = rejected.iter().filter_map(|r| Some((r.id?, r.frame?))).collect();
    for (id, recs) in tracks {
        for w in recs.windows(2) {
            let (a, b) = (w[0].frame, w[1].frame);
            if b <= a {
                return Err(Error::Dataset(format!("vehicle {id}: frame {b} follows frame {a}")));
            }
            if (a + 1..b).any(|f| !dropped.contains(&(*id, f))) {
                return Err(Error::Dataset(format!("vehicle {id}: frames {a} and {b} are not contiguous")));
            }
        }
    }
    Ok(())
}

fn check_lanes(tracks: &BTreeMap<VehicleId, Vec<TrackRecord>>, road: &RoadModel) -> Result<()> {
    let total: usize = tracks.values().map(Vec::len).sum();
    if total == 0 {
        return Ok(());
    }
    let agree = tracks
        .values()
        .flatten()
        .filter(|r| lane_of(r.y, road).map_or(0, |l| l as u32 + 1) == r.lane_id)
        .count();
    let share = agree as f64 / total as f64;
    if share < LANE_AGREEMENT {
        return Err(Error::Dataset(format!(
            "recorded lane ids agree with the lane lines on only {:.2}% of frames",
            100.0 * share
        )));
    }
    Ok(())
}

impl TrackFile {
    pub fn record_count(&self) -> usize {
        self.tracks.values().map(Vec::len).sum()
    }

    /// Writes the CSV, rows ordered by vehicle then frame.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in self.tracks.values().flatten() {
            out.serialize(r)?;
        }
        if self.tracks.is_empty() {
            out.write_record(HEADER)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `path` and its sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)?;
        std::fs::write(meta_path(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn road(&self) -> Result<RoadModel> {
        self.meta.road()
    }
}

/// Stretches the recording along the road: longitudinal positions and both
/// velocity components are multiplied by `factor`; lateral positions and the
/// lane geometry stay as recorded.
pub fn preprocess_scale(tf: &TrackFile, factor: f64) -> Result<TrackFile> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::Config(format!("scale factor must be positive, got {factor}")));
    }
    let mut out = tf.clone();
    for r in out.tracks.values_mut().flatten() {
        r.x *= factor;
        r.vx *= factor;
        r.vy *= factor;
    }
    Ok(out)
}

/// Which recorded vehicles become egos.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LaneFilter {
    #[default]
    All,
    /// Vehicles that drive in the left-most lane at some point.
    Leftmost,
    /// Vehicles that drive in this lane (0 = right-most) at some point.
    Lane(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub lane_filter: LaneFilter,
    pub dt: f64,
    /// Tracks shorter than this are skipped (s).
    pub min_duration: f64,
    pub thresholds: LawThresholds,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self { lane_filter: LaneFilter::All, dt: 0.05, min_duration: 2.0, thresholds: LawThresholds::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub runs: Vec<(VehicleId, Scenario)>,
    pub skipped: Vec<String>,
}

fn times(recs: &[TrackRecord], fr: f64) -> (f64, f64) {
    (recs[0].frame as f64 / fr, recs[recs.len() - 1].frame as f64 / fr)
}

/// Linear interpolation of a track at absolute time `t`, inside its span.
fn interpolate(recs: &[TrackRecord], fr: f64, t: f64) -> Option<TrackRecord> {
    let (t0, t1) = times(recs, fr);
    if t < t0 - 1e-9 || t > t1 + 1e-9 {
        return None;
    }
    let f = (t * fr).clamp(recs[0].frame as f64, recs[recs.len() - 1].frame as f64);
    let i = recs.partition_point(|r| (r.frame as f64) <= f).clamp(1, recs.len().max(1));
    if recs.len() == 1 {
        return Some(recs[0]);
    }
    let (a, b) = (&recs[i - 1], &recs[i.min(recs.len() - 1)]);
    if a.frame == b.frame {
        return Some(*a);
    }
    let w = (f - a.frame as f64) / (b.frame - a.frame) as f64;
    let lerp = |p: f64, q: f64| p + (q - p) * w;
    Some(TrackRecord {
        x: lerp(a.x, b.x),
        y: lerp(a.y, b.y),
        vx: lerp(a.vx, b.vx),
        vy: lerp(a.vy, b.vy),
        ..*a
    })
}

fn sample_of(r: &TrackRecord, t: f64) -> RefSample {
    RefSample { t, x: r.x, y: r.y, vx: r.vx, vy: r.vy }
}

fn vehicle_of(r: &TrackRecord) -> VehicleState {
    VehicleState::new(r.id, r.x, r.y, r.vx).with_size(r.length, r.width)
}

/// Merges per-tick intents into windows.
fn intent_windows(kinds: &[(f64, IntentKind)], dt: f64) -> Vec<IntentWindow> {
    let mut out: Vec<IntentWindow> = Vec::new();
    for &(t, kind) in kinds {
        if kind == IntentKind::None {
            continue;
        }
        match out.last_mut() {
            Some(w) if w.kind == kind && (t - w.end) <= dt * 1.5 => w.end = t,
            _ => out.push(IntentWindow { start: t, end: t, kind }),
        }
    }
    out
}

/// Builds one scenario per eligible vehicle. The vehicle's own track is the
/// initial reference, every other vehicle is replayed, and the intent stream
/// is derived from the recorded motion.
pub fn extract_runs(tf: &TrackFile, opts: &ExtractOptions) -> Result<Extraction> {
    if !(opts.dt > 0.0) {
        return Err(Error::Config("dt must be positive".into()));
    }
    let road = tf.road()?;
    let fr = tf.meta.frame_rate;
    let wanted = match opts.lane_filter {
        LaneFilter::All => None,
        LaneFilter::Leftmost => Some(road.lane_count() - 1),
        LaneFilter::Lane(l) => Some(l),
    };
    let mut runs = Vec::new();
    let mut skipped = Vec::new();

    for (&id, recs) in &tf.tracks {
        if let Some(l) = wanted {
            if !recs.iter().any(|r| lane_of(r.y, &road) == Some(l)) {
                continue;
            }
        }
        let (t0, t1) = times(recs, fr);
        if t1 - t0 < opts.min_duration - 1e-9 {
            skipped.push(format!("vehicle {id}: track lasts {:.2} s, shorter than {:.2} s", t1 - t0, opts.min_duration));
            continue;
        }
        let n = ((t1 - t0) / opts.dt + 1e-9).floor() as usize;
        let grid: Vec<f64> = (0..=n).map(|k| k as f64 * opts.dt).collect();
        let ego_samples: Vec<RefSample> = grid
            .iter()
            .map(|&tau| sample_of(&interpolate(recs, fr, t0 + tau).expect("inside the track"), tau))
            .collect();
        let first = recs[0];
        let ego = vehicle_of(&first);
        if lane_of(ego.y, &road).is_none() {
            skipped.push(format!("vehicle {id}: starts off the road"));
            continue;
        }

        let mut surroundings = Vec::new();
        for (&oid, other) in &tf.tracks {
            if oid == id {
                continue;
            }
            let samples: Vec<RefSample> = grid
                .iter()
                .filter_map(|&tau| interpolate(other, fr, t0 + tau).map(|r| sample_of(&r, tau)))
                .collect();
            if samples.is_empty() {
                continue;
            }
            let head = interpolate(other, fr, t0 + samples[0].t).expect("sampled");
            surroundings.push(SurroundingSpec { init: vehicle_of(&head), motion: Motion::Replay { samples } });
        }

        let kinds: Vec<(f64, IntentKind)> = grid
            .iter()
            .zip(&ego_samples)
            .map(|(&tau, s)| {
                let state = VehicleState { vy: s.vy, ..VehicleState::new(id, s.x, s.y, s.vx).with_size(first.length, first.width) };
                let others: Vec<VehicleState> = tf
                    .tracks
                    .iter()
                    .filter(|(oid, _)| **oid != id)
                    .filter_map(|(_, o)| interpolate(o, fr, t0 + tau))
                    .map(|r| VehicleState { vy: r.vy, ..vehicle_of(&r) })
                    .collect();
                (tau, detect_intent(&state, &others, &road, &opts.thresholds, None, tau).kind)
            })
            .collect();

        let scenario = Scenario {
            name: format!("vehicle-{id}"),
            road: road.clone(),
            thresholds: opts.thresholds,
            ego: VehicleState { vy: first.vy, ..ego },
            initial_ref: InitialReference::ReplayTrack { samples: ego_samples },
            surroundings,
            intents: intent_windows(&kinds, opts.dt),
            duration: n as f64 * opts.dt,
            dt: opts.dt,
            seed: id,
        };
        match scenario.validate() {
            Ok(()) => runs.push((id, scenario)),
            Err(e) => skipped.push(format!("vehicle {id}: {e}")),
        }
    }
    Ok(Extraction { runs, skipped })
}
