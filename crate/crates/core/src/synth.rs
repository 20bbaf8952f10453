//! Synthetic congested traffic in the track-file format, for offline runs of
//! the dataset pipeline.
//!
//! Vehicles follow the intelligent driver model in their lane and now and
//! then change lanes, sometimes into gaps that are too small. Speeds and
//! spacing are recorded at congested scale; the speed limits in the sidecar
//! are meant for the recording after a 2x longitudinal stretch.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{SpeedLimit, TrackFile, TrackMeta, TrackRecord};
use crate::model::kmh;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub frame_rate: f64,
    pub duration: f64,
    pub lane_width: f64,
    pub vehicles_per_lane: usize,
    /// Desired-speed range per lane, right to left (m/s, recorded scale).
    pub desired_speed: Vec<(f64, f64)>,
    /// Speed limits per lane written to the sidecar (m/s).
    pub speed_limits: Vec<SpeedLimit>,
    /// Lane-change attempts per vehicle and second.
    pub lane_change_rate: f64,
    pub lane_change_time: f64,
    /// Range of the rear gap a driver accepts when changing lanes (m).
    pub accepted_gap: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            frame_rate: 10.0,
            duration: 40.0,
            lane_width: 3.75,
            vehicles_per_lane: 9,
            desired_speed: vec![(8.0, 11.0), (10.0, 13.0), (12.5, 16.0)],
            speed_limits: vec![
                SpeedLimit { v_min: kmh(60.0), v_max: kmh(120.0) },
                SpeedLimit { v_min: kmh(80.0), v_max: kmh(120.0) },
                SpeedLimit { v_min: kmh(90.0), v_max: kmh(120.0) },
            ],
            lane_change_rate: 0.02,
            lane_change_time: 4.0,
            accepted_gap: (4.0, 25.0),
        }
    }
}

// intelligent driver model
const IDM_ACCEL: f64 = 1.0;
const IDM_DECEL: f64 = 1.5;
const IDM_GAP: f64 = 2.0;
const IDM_HEADWAY: f64 = 1.4;

#[derive(Debug, Clone)]
struct Car {
    id: u64,
    x: f64,
    v: f64,
    v0: f64,
    lane: usize,
    length: f64,
    width: f64,
    /// (from lane, to lane, start time)
    change: Option<(usize, usize, f64)>,
}

impl Car {
    fn occupies(&self, lane: usize) -> bool {
        self.lane == lane || self.change.is_some_and(|(a, b, _)| a == lane || b == lane)
    }
}

fn idm(v: f64, v0: f64, lead: Option<(f64, f64)>) -> f64 {
    let free = 1.0 - (v / v0).powi(4);
    match lead {
        Some((gap, lead_v)) => {
            let s_star = IDM_GAP + v * IDM_HEADWAY + v * (v - lead_v) / (2.0 * (IDM_ACCEL * IDM_DECEL).sqrt());
            IDM_ACCEL * (free - (s_star.max(0.0) / gap.max(0.1)).powi(2))
        }
        None => IDM_ACCEL * free,
    }
}

/// Nearest vehicle ahead of `car` in any lane it occupies: (bumper gap, speed).
fn leader(cars: &[Car], i: usize) -> Option<(f64, f64)> {
    let me = &cars[i];
    cars.iter()
        .enumerate()
        .filter(|(j, o)| *j != i && o.x > me.x && (me.occupies(o.lane) || o.change.is_some_and(|(_, b, _)| me.occupies(b))))
        .map(|(_, o)| (o.x - me.x - 0.5 * (o.length + me.length), o.v))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

fn rear_gap(cars: &[Car], i: usize, lane: usize) -> f64 {
    let me = &cars[i];
    cars.iter()
        .enumerate()
        .filter(|(j, o)| *j != i && o.x <= me.x && o.occupies(lane))
        .map(|(_, o)| me.x - o.x - 0.5 * (o.length + me.length))
        .fold(f64::INFINITY, f64::min)
}

/// One synthetic recording.
pub fn generate(cfg: &SynthConfig) -> TrackFile {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lanes = cfg.desired_speed.len();
    let centers: Vec<f64> = (0..lanes).map(|l| (l as f64 + 0.5) * cfg.lane_width).collect();

    let mut cars = Vec::new();
    let mut id = 1;
    for (lane, &(lo, hi)) in cfg.desired_speed.iter().enumerate() {
        let mut x = rng.gen_range(0.0..10.0);
        for _ in 0..cfg.vehicles_per_lane {
            let v0 = rng.gen_range(lo..hi);
            let truck = rng.gen_bool(if lane == 0 { 0.2 } else { 0.03 });
            let (length, width) = if truck { (rng.gen_range(9.0..13.0), 2.5) } else { (rng.gen_range(4.2..5.0), 1.8) };
            let v = v0 * rng.gen_range(0.75..0.95);
            cars.push(Car { id, x, v, v0, lane, length, width, change: None });
            id += 1;
            x += length + IDM_GAP + v * IDM_HEADWAY * rng.gen_range(1.0..1.8);
        }
    }

    let dt = 1.0 / cfg.frame_rate;
    let frames = (cfg.duration * cfg.frame_rate).round() as u64;
    let mut tracks: BTreeMap<u64, Vec<TrackRecord>> = BTreeMap::new();
    let mut accepted: Vec<f64> = cars.iter().map(|_| rng.gen_range(cfg.accepted_gap.0..cfg.accepted_gap.1)).collect();
    for frame in 0..=frames {
        let t = frame as f64 * dt;
        for c in &cars {
            let (y, vy) = lateral(c, t, &centers, cfg.lane_change_time);
            let lane_id = (0..lanes).find(|&l| y >= l as f64 * cfg.lane_width && y < (l + 1) as f64 * cfg.lane_width);
            tracks.entry(c.id).or_default().push(TrackRecord {
                frame,
                id: c.id,
                x: c.x,
                y,
                vx: c.v,
                vy,
                lane_id: lane_id.map_or(0, |l| l as u32 + 1),
                width: c.width,
                length: c.length,
            });
        }
        if frame == frames {
            break;
        }

        let acc: Vec<f64> = (0..cars.len()).map(|i| idm(cars[i].v, cars[i].v0, leader(&cars, i))).collect();
        for (c, a) in cars.iter_mut().zip(&acc) {
            let a = a.max(-8.0);
            let v1 = (c.v + a * dt).max(0.0);
            c.x += 0.5 * (c.v + v1) * dt;
            c.v = v1;
        }
        for i in 0..cars.len() {
            if let Some((_, to, start)) = cars[i].change {
                if t + dt >= start + cfg.lane_change_time - 1e-9 {
                    cars[i].lane = to;
                    cars[i].change = None;
                }
                continue;
            }
            if !rng.gen_bool((cfg.lane_change_rate * dt).min(1.0)) {
                continue;
            }
            let lane = cars[i].lane;
            let options: Vec<usize> = [lane.checked_sub(1), Some(lane + 1).filter(|&l| l < lanes)].into_iter().flatten().collect();
            let to = options[rng.gen_range(0..options.len())];
            if rear_gap(&cars, i, to) >= accepted[i] {
                cars[i].change = Some((lane, to, t + dt));
                accepted[i] = rng.gen_range(cfg.accepted_gap.0..cfg.accepted_gap.1);
            }
        }
    }

    TrackFile {
        meta: TrackMeta {
            frame_rate: cfg.frame_rate,
            lane_lines: (0..=lanes).map(|l| l as f64 * cfg.lane_width).collect(),
            speed_limits: cfg.speed_limits.clone(),
        },
        tracks,
        rejected: Vec::new(),
    }
}

/// Lateral position and speed; lane changes follow a half-cosine.
fn lateral(c: &Car, t: f64, centers: &[f64], duration: f64) -> (f64, f64) {
    match c.change {
        Some((from, to, start)) if t >= start => {
            let u = ((t - start) / duration).min(1.0);
            let (a, b) = (centers[from], centers[to]);
            let ph = std::f64::consts::PI * u;
            (a + (b - a) * 0.5 * (1.0 - ph.cos()), (b - a) * 0.5 * std::f64::consts::PI / duration * ph.sin())
        }
        _ => (centers[c.lane], 0.0),
    }
}

/// The bundled suite: `files` recordings with consecutive seeds.
pub fn congested_suite(seed: u64, files: usize) -> Vec<TrackFile> {
    (0..files as u64).map(|k| generate(&SynthConfig { seed: seed + k, ..SynthConfig::default() })).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{extract_runs, parse_reader, preprocess_scale, ExtractOptions, LaneFilter};

    #[test]
    fn same_seed_same_file() {
        let a = generate(&SynthConfig::default());
        let b = generate(&SynthConfig::default());
        assert_eq!(a, b);
        let c = generate(&SynthConfig { seed: 1, ..SynthConfig::default() });
        assert_ne!(a, c);
    }

    #[test]
    fn passes_the_parser_gates() {
        let tf = generate(&SynthConfig::default());
        let mut buf = Vec::new();
        tf.write_csv(&mut buf).unwrap();
        let back = parse_reader(buf.as_slice(), tf.meta.clone()).unwrap();
        assert!(back.rejected.is_empty());
        assert_eq!(back.record_count(), tf.record_count());
        assert!(tf.tracks.values().flatten().all(|r| r.vx >= 0.0 && r.lane_id > 0));
    }

    #[test]
    fn recordings_contain_lane_changes() {
        let tf = generate(&SynthConfig::default());
        assert!(tf.tracks.values().any(|t| t.iter().any(|r| r.vy > 0.25)));
        assert!(tf.tracks.values().any(|t| t.iter().any(|r| r.vy < -0.25)));
    }

    #[test]
    fn suite_size() {
        let mut runs = 0;
        let mut frames = 0;
        for tf in congested_suite(0, 3) {
            let tf = preprocess_scale(&tf, 2.0).unwrap();
            let opts = ExtractOptions { lane_filter: LaneFilter::Leftmost, ..Default::default() };
            for (_, sc) in extract_runs(&tf, &opts).unwrap().runs {
                runs += 1;
                frames += sc.frame_count();
            }
        }
        assert!(runs >= 20, "{runs}");
        assert!(frames >= 10_000, "{frames}");
    }
}
