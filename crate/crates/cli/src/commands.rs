use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use roadlaw_core::batch::{self, BatchOptions, Failure, Run};
use roadlaw_core::dataset::{self, ExtractOptions, LaneFilter};
use roadlaw_core::sim::{max_reference_deviation, SimConfig, SimLog, Stats};
use roadlaw_core::{scenarios, synth, FrameLabel, LawThresholds, Scenario, VehicleId};
use serde::Serialize;

use crate::{units, CommonArgs, DataArgs, Format};

pub const BUILTINS: [&str; 5] =
    ["speed-limit", "following-distance", "lane-change-abort", "left-rear-accelerates", "overtaking"];

fn thresholds(base: LawThresholds, common: &CommonArgs) -> Result<LawThresholds> {
    let th = match &common.thresholds {
        Some(p) => units::load_file(base, p)?,
        None => base,
    };
    units::merge_assignments(th, &common.sets)
}

fn sim_config(dt: f64, common: &CommonArgs) -> SimConfig {
    let mut cfg = SimConfig::new(dt);
    if let Some(np) = common.np {
        cfg.mpc.np = np;
    }
    if let Some(nc) = common.nc {
        cfg.mpc.nc = nc;
    }
    cfg
}

fn lane_filter(s: &str) -> Result<LaneFilter> {
    match s.to_ascii_lowercase().as_str() {
        "all" => Ok(LaneFilter::All),
        "leftmost" => Ok(LaneFilter::Leftmost),
        n => n.parse().map(LaneFilter::Lane).map_err(|_| anyhow!("--lanes: expected all, leftmost or a lane index, got `{s}`")),
    }
}

fn batch_options(data: &DataArgs, common: &CommonArgs) -> Result<BatchOptions> {
    let dt = common.dt.unwrap_or(ExtractOptions::default().dt);
    let opts = BatchOptions {
        extract: ExtractOptions {
            lane_filter: lane_filter(&data.lanes)?,
            dt,
            min_duration: data.min_duration,
            thresholds: thresholds(LawThresholds::default(), common)?,
        },
        scale: data.scale,
        sim: sim_config(dt, common),
    };
    opts.validate()?;
    Ok(opts)
}

fn out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("cannot write {}", path.display()))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads track files into ego runs. Files that cannot be used are returned
/// as failures.
fn load(files: &[PathBuf], opts: &BatchOptions) -> (Vec<Run>, usize, Vec<Failure>) {
    let mut runs = Vec::new();
    let mut skipped = 0;
    let mut failures = Vec::new();
    for path in files {
        let source = path.display().to_string();
        let res = dataset::parse(path).map_err(anyhow::Error::from).and_then(|tf| {
            if !tf.rejected.is_empty() {
                log::warn!("{source}: {} rows rejected", tf.rejected.len());
            }
            if tf.tracks.is_empty() {
                bail!("no tracks");
            }
            Ok(batch::prepare(&source, &tf, opts)?)
        });
        match res {
            Ok((r, s)) => {
                log::info!("{source}: {} runs, {} vehicles skipped", r.len(), s.len());
                runs.extend(r);
                skipped += s.len();
            }
            Err(e) => {
                eprintln!("{source}: {e:#}");
                failures.push(Failure { source, vehicle: None, error: format!("{e:#}") });
            }
        }
    }
    (runs, skipped, failures)
}

#[derive(Serialize)]
struct LabelRow<'a> {
    source: &'a str,
    vehicle: VehicleId,
    #[serde(flatten)]
    label: &'a FrameLabel,
}

fn write_labels(dir: &Path, format: Format, runs: &[Run], logs: &[roadlaw_core::Result<SimLog>]) -> Result<()> {
    let rows = runs.iter().zip(logs).filter_map(|(r, l)| l.as_ref().ok().map(|l| (r, l))).flat_map(|(r, l)| {
        l.frames.iter().map(move |f| LabelRow { source: &r.source, vehicle: r.vehicle, label: &f.label })
    });
    match format {
        Format::Json => {
            let mut w = create(dir, "labels.jsonl")?;
            for row in rows {
                serde_json::to_writer(&mut w, &row)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(create(dir, "labels.csv")?);
            w.write_record(["source", "vehicle", "t", "label", "laws"])?;
            for row in rows {
                w.write_record([
                    row.source.to_string(),
                    row.vehicle.to_string(),
                    row.label.t.to_string(),
                    row.label.state.as_str().to_string(),
                    row.label.laws.to_string(),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn pct(x: f64) -> String {
    format!("{:6.2}%", 100.0 * x)
}

#[derive(Serialize)]
struct AuditSummary<'a> {
    files: usize,
    runs: usize,
    skipped_vehicles: usize,
    stats: &'a Stats,
    failures: &'a [Failure],
}

pub fn audit(files: &[PathBuf], data: &DataArgs, common: &CommonArgs) -> Result<()> {
    let opts = batch_options(data, common)?;
    out_dir(&common.out)?;
    let (runs, skipped, mut failures) = load(files, &opts);
    if runs.is_empty() {
        bail!("no tracks");
    }
    let file_failures = failures.len();
    let logs = batch::audit(&runs, &opts);
    let (stats, run_failures) = batch::summarize(&runs, &logs);
    failures.extend(run_failures);
    write_labels(&common.out, common.format, &runs, &logs)?;
    write_json(
        &common.out,
        "summary.json",
        &AuditSummary { files: files.len(), runs: runs.len(), skipped_vehicles: skipped, stats: &stats, failures: &failures },
    )?;
    println!("runs {}  frames {}", runs.len(), stats.frames);
    println!("compliance {}  active {}  passive {}", pct(stats.compliance_rate), pct(stats.active_rate), pct(stats.passive_rate));
    let laws: Vec<String> = stats.law_histogram.iter().filter(|(_, n)| **n > 0).map(|(l, n)| format!("{l}:{n}")).collect();
    println!("violating frames per law  {}", if laws.is_empty() { "none".into() } else { laws.join(" ") });
    if !failures.is_empty() {
        bail!("{} of {} files failed, {} runs failed", file_failures, files.len(), failures.len() - file_failures);
    }
    Ok(())
}

fn load_scenario(path: Option<&Path>, builtin: Option<&str>) -> Result<Scenario> {
    match (path, builtin) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            Scenario::from_json(&text).with_context(|| format!("{}", p.display()))
        }
        (None, Some(name)) => scenarios::all()
            .into_iter()
            .find(|s| s.name == name)
            .ok_or_else(|| anyhow!("no bundled scenario `{name}`")),
        (None, None) => bail!("give a scenario file or --builtin"),
    }
}

#[derive(Serialize)]
struct SimSummary<'a> {
    scenario: &'a str,
    compliance: bool,
    dt: f64,
    seed: u64,
    frames: usize,
    terminated: &'a Option<String>,
    fallbacks: usize,
    slack_events: usize,
    /// Largest distance between ego and reference; replay runs stay near zero.
    reference_deviation: f64,
    stats: &'a Stats,
}

pub fn simulate(
    path: Option<&Path>,
    builtin: Option<&str>,
    disable_compliance: bool,
    seed: Option<u64>,
    common: &CommonArgs,
) -> Result<()> {
    let mut sc = load_scenario(path, builtin)?;
    if let Some(dt) = common.dt {
        sc.dt = dt;
    }
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    sc.thresholds = thresholds(sc.thresholds, common)?;
    let mut cfg = sim_config(sc.dt, common);
    cfg.compliance = !disable_compliance;
    out_dir(&common.out)?;

    let log = roadlaw_core::run(&sc, &cfg)?;
    let dir = &common.out;
    match common.format {
        Format::Json => {
            let mut w = create(dir, "frames.jsonl")?;
            log.write_jsonl(&mut w)?;
            w.flush()?;
        }
        Format::Csv => {
            let mut w = create(dir, "frames.csv")?;
            log.write_frames_csv(&mut w)?;
            w.flush()?;
        }
    }
    log.write_speed_series(&sc.road, create(dir, "speed.csv")?)?;
    log.write_trajectory_series(create(dir, "trajectory.csv")?)?;
    log.write_label_series(create(dir, "labels.csv")?)?;
    write_json(dir, "scenario.json", &sc)?;
    let stats = roadlaw_core::aggregate_stats([&log]);
    write_json(
        dir,
        "summary.json",
        &SimSummary {
            scenario: &sc.name,
            compliance: cfg.compliance,
            dt: sc.dt,
            seed: sc.seed,
            frames: log.frames.len(),
            terminated: &log.terminated,
            fallbacks: log.fallbacks,
            slack_events: log.slack_events,
            reference_deviation: max_reference_deviation(&log),
            stats: &stats,
        },
    )?;
    println!(
        "{}: {} frames  compliance {}  active {}  passive {}  intervention {}",
        sc.name,
        stats.frames,
        pct(stats.compliance_rate),
        pct(stats.active_rate),
        pct(stats.passive_rate),
        pct(stats.intervention_rate)
    );
    if let Some(reason) = &log.terminated {
        println!("terminated early: {reason}");
    }
    Ok(())
}

#[derive(Serialize)]
struct RunRow<'a> {
    source: &'a str,
    vehicle: VehicleId,
    frames: usize,
    before_compliance: f64,
    before_active: f64,
    after_compliance: f64,
    after_active: f64,
    after_intervention: f64,
}

#[derive(Serialize)]
struct BatchSummary<'a> {
    files: usize,
    runs: usize,
    skipped_vehicles: usize,
    before: &'a Stats,
    after: &'a Stats,
    failures: &'a [Failure],
}

fn track_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no track files in {}", dir.display());
    }
    Ok(files)
}

pub fn batch(dir: &Path, data: &DataArgs, common: &CommonArgs) -> Result<()> {
    let opts = batch_options(data, common)?;
    let files = track_files(dir)?;
    out_dir(&common.out)?;
    let (runs, skipped, mut failures) = load(&files, &opts);
    if runs.is_empty() {
        bail!("no tracks");
    }
    let before = batch::audit(&runs, &opts);
    let after = batch::evaluate(&runs, &opts);
    let (sb, fb) = batch::summarize(&runs, &before);
    let (sa, fa) = batch::summarize(&runs, &after);
    failures.extend(fb);
    failures.extend(fa);
    for f in &failures {
        log::warn!("{}: {}", f.source, f.error);
    }

    let rows: Vec<RunRow> = runs
        .iter()
        .zip(before.iter().zip(&after))
        .filter_map(|(r, (b, a))| {
            let (b, a) = (b.as_ref().ok()?, a.as_ref().ok()?);
            let (b, a) = (roadlaw_core::aggregate_stats([b]), roadlaw_core::aggregate_stats([a]));
            Some(RunRow {
                source: &r.source,
                vehicle: r.vehicle,
                frames: a.frames,
                before_compliance: b.compliance_rate,
                before_active: b.active_rate,
                after_compliance: a.compliance_rate,
                after_active: a.active_rate,
                after_intervention: a.intervention_rate,
            })
        })
        .collect();
    match common.format {
        Format::Json => write_json(&common.out, "runs.json", &rows)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(create(&common.out, "runs.csv")?);
            for row in &rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
    }
    write_json(
        &common.out,
        "summary.json",
        &BatchSummary {
            files: files.len(),
            runs: runs.len(),
            skipped_vehicles: skipped,
            before: &sb,
            after: &sa,
            failures: &failures,
        },
    )?;

    println!("files {}  runs {}  frames {}", files.len(), runs.len(), sa.frames);
    println!("{:<14}{:>9}{:>9}", "", "before", "after");
    for (name, b, a) in [
        ("compliance", sb.compliance_rate, sa.compliance_rate),
        ("active", sb.active_rate, sa.active_rate),
        ("passive", sb.passive_rate, sa.passive_rate),
        ("intervention", sb.intervention_rate, sa.intervention_rate),
    ] {
        println!("{name:<14}{:>9}{:>9}", pct(b), pct(a));
    }
    if !failures.is_empty() {
        println!("{} failures, see summary.json", failures.len());
    }
    Ok(())
}

pub fn gen_synthetic(seed: u64, files: usize, out: &Path) -> Result<()> {
    if files == 0 {
        bail!("--files must be at least 1");
    }
    out_dir(out)?;
    for (k, tf) in synth::congested_suite(seed, files).into_iter().enumerate() {
        let path = out.join(format!("synth_{:03}.csv", seed + k as u64));
        tf.save(&path).with_context(|| format!("cannot write {}", path.display()))?;
        println!("{}  {} vehicles  {} rows", path.display(), tf.tracks.len(), tf.record_count());
    }
    Ok(())
}
