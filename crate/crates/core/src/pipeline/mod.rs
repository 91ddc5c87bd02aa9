//! File-based pipeline stages. Each stage reads the outputs of the previous
//! one from disk, writes its own outputs plus a `manifest.json`, and refuses
//! to run when an upstream output is missing.

mod analyze;
mod manifest;
mod report;

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::home::{read_homes_csv, write_homes_csv, HomeAccumulator, HomeSeries};
use crate::ingest::{
    load_antennas, load_comunas, load_quarantines, open_xdr, write_antennas, write_comunas, AntennaRegistry,
    IngestStats, QuarantineSchedule, XdrFormat, XdrWriter,
};
use crate::migration::{
    build_od, classify_all, emigration_pct, net_rates, write_od_csv, write_pct_csv, write_records_csv, Direction,
    Level,
};
use crate::mobility::{
    build_index_series, home_comunas, home_lookup, summary_rows, write_index_daily, write_index_summary,
    MobilityAccumulator, MobilityStats,
};
use crate::model::XdrEvent;
use crate::synth::{emit_events, generate_world, write_intensity_csv, ScenarioConfig};
use crate::window::{StudyWindow, WindowParams};

pub use analyze::{cmd_analyze, AnalyzeInputs, SUMMARY_FILE};
pub use manifest::{sha256_file, RunManifest, StageRecorder, MANIFEST_FILE};
pub use report::{cmd_report, REPORT_FILE};

pub const HOMES_FILE: &str = "homes.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const OD_COUNTS_FILE: &str = "od_counts.csv";
pub const OD_PCT_FILE: &str = "od_pct.csv";
pub const NET_RATES_FILE: &str = "net_rates.csv";
pub const INDEX_DAILY_FILE: &str = "index_daily.csv";
pub const INDEX_SUMMARY_FILE: &str = "index_summary.csv";

const CHUNK_EVENTS: usize = 1 << 18;
const SHARDS: usize = 16;

/// How a study window is chosen on the command line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowOptions {
    pub year: i32,
    pub tz_offset_hours: i32,
    pub baseline_week: Option<NaiveDate>,
}

impl Default for WindowOptions {
    fn default() -> Self {
        WindowOptions { year: 2020, tz_offset_hours: crate::window::DEFAULT_TZ_OFFSET_HOURS, baseline_week: None }
    }
}

impl WindowOptions {
    pub fn build(&self) -> Result<StudyWindow> {
        let w = StudyWindow::new(self.year, self.tz_offset_hours)?;
        match self.baseline_week {
            Some(monday) => w.with_baseline_week(monday),
            None => Ok(w),
        }
    }
}

/// Ingestion knobs shared by the stages that read XDR logs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IngestOptions {
    pub min_night_events: u32,
    pub max_drop_fraction: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            min_night_events: crate::home::DEFAULT_MIN_NIGHT_EVENTS,
            max_drop_fraction: crate::ingest::DEFAULT_MAX_DROP_FRACTION,
        }
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (all cores when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::validation("--threads must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::validation(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Path of an upstream artifact, or the error naming the stage to run first.
fn upstream(dir: &Path, file: &str, required: &'static str) -> Result<PathBuf> {
    let path = dir.join(file);
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::PipelineOrder { required, missing: path })
    }
}

fn upstream_manifest(dir: &Path, required: &'static str) -> Result<RunManifest> {
    let path = upstream(dir, MANIFEST_FILE, required)?;
    RunManifest::read(&path)
}

fn manifest_window(m: &RunManifest) -> Result<StudyWindow> {
    let params: WindowParams = serde_json::from_value(m.parameters["window"].clone())
        .map_err(|e| Error::schema(format!("{} manifest lacks window parameters: {e}", m.stage)))?;
    StudyWindow::from_params(&params)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::schema(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Streams events from `paths` in order, routing each event to a shard by
/// device so per-device order is preserved. Shards are processed in
/// parallel one chunk at a time.
fn stream_sharded<A: Send>(
    paths: &[PathBuf],
    window: &StudyWindow,
    registry: &AntennaRegistry,
    shards: &mut [A],
    observe: impl Fn(&mut A, &XdrEvent) -> Result<()> + Sync,
) -> Result<IngestStats> {
    let n = shards.len() as u64;
    let mut buckets: Vec<Vec<XdrEvent>> = (0..shards.len()).map(|_| Vec::with_capacity(CHUNK_EVENTS / 8)).collect();
    let flush = |shards: &mut [A], buckets: &mut [Vec<XdrEvent>]| -> Result<()> {
        shards.par_iter_mut().zip(buckets.par_iter_mut()).try_for_each(|(acc, bucket)| {
            for ev in bucket.iter() {
                observe(acc, ev)?;
            }
            bucket.clear();
            Ok(())
        })
    };
    let mut stats = IngestStats::default();
    for path in paths {
        let mut reader = open_xdr(path, window, registry)?;
        let mut pending = 0;
        for ev in reader.by_ref() {
            let ev = ev.map_err(|e| match e {
                Error::Stream(io) => Error::io(path, io),
                other => other,
            })?;
            buckets[(crate::synth::rng::mix(ev.device.0) % n) as usize].push(ev);
            pending += 1;
            if pending == CHUNK_EVENTS {
                flush(shards, &mut buckets)?;
                pending = 0;
            }
        }
        stats.merge(&reader.stats());
    }
    flush(shards, &mut buckets)?;
    Ok(stats)
}

fn xdr_inputs(rec: &mut StageRecorder, xdr: &[PathBuf]) -> Result<()> {
    if xdr.is_empty() {
        return Err(Error::validation("at least one XDR file is required"));
    }
    for (i, p) in xdr.iter().enumerate() {
        rec.input(&format!("xdr[{i}]"), p)?;
    }
    Ok(())
}

/// Generates a synthetic world and writes its tables, event log and ground truth.
pub fn cmd_synth(config: &ScenarioConfig, format: XdrFormat, out: &Path) -> Result<RunManifest> {
    ensure_dir(out)?;
    let mut rec = StageRecorder::new("synth", json!({ "scenario": config, "format": format }));
    let world = rec.time("generate", || generate_world(config))?;
    let xdr_name = format!("xdr.{}", format.extension());
    let written = rec.time("emit", || -> Result<u64> {
        write_comunas(create(&out.join("comunas.csv"))?, &world.comunas)?;
        write_antennas(create(&out.join("antennas.csv"))?, &world.antennas)?;
        world.quarantines.write_csv(create(&out.join("quarantines.csv"))?)?;
        world.write_ground_truth(create(&out.join("ground_truth.csv"))?)?;
        world.write_true_homes(create(&out.join("true_homes.csv"))?)?;
        write_intensity_csv(&world, create(&out.join("intensity.csv"))?)?;
        write_json(&out.join("scenario.json"), config)?;
        let mut writer = XdrWriter::create(&out.join(&xdr_name), format, &world.window)?;
        let n = emit_events(&world, &mut writer)?;
        writer.finish()?;
        Ok(n)
    })?;
    let migrated = world.agents.iter().filter(|a| a.migrated).count();
    rec.finish(
        out,
        &[
            "comunas.csv",
            "antennas.csv",
            "quarantines.csv",
            "ground_truth.csv",
            "true_homes.csv",
            "intensity.csv",
            "scenario.json",
            &xdr_name,
        ],
        None,
        json!({ "events": written, "agents": world.agents.len(), "migrated_agents": migrated,
                "window": world.window.params() }),
    )
}

/// Infers weekly night-time homes from one or more XDR logs.
pub fn cmd_homes(
    xdr: &[PathBuf],
    antennas: &Path,
    window: &StudyWindow,
    opts: &IngestOptions,
    out: &Path,
) -> Result<RunManifest> {
    ensure_dir(out)?;
    let mut rec = StageRecorder::new(
        "homes",
        json!({ "window": window.params(), "min_night_events": opts.min_night_events,
                "max_drop_fraction": opts.max_drop_fraction }),
    );
    xdr_inputs(&mut rec, xdr)?;
    rec.input("antennas", antennas)?;
    let registry = load_antennas(antennas)?;
    let mut shards: Vec<HomeAccumulator> = (0..SHARDS).map(|_| HomeAccumulator::new(window.clone())).collect();
    let stats = rec.time("ingest", || {
        stream_sharded(xdr, window, &registry, &mut shards, |acc, ev| {
            acc.observe(ev);
            Ok(())
        })
    })?;
    stats.check_drop_rate(opts.max_drop_fraction)?;
    let series = rec.time("resolve", || {
        let mut it = shards.into_iter();
        let mut acc = it.next().expect("at least one shard");
        for s in it {
            acc.merge(s);
        }
        acc.finish(&registry, opts.min_night_events)
    });
    write_homes_csv(create(&out.join(HOMES_FILE))?, &series, window)?;
    let resolved_weeks: usize = series.iter().map(HomeSeries::resolved_weeks).sum();
    rec.finish(
        out,
        &[HOMES_FILE],
        Some(stats),
        json!({
            "devices": series.len(),
            "resolved_device_weeks": resolved_weeks,
            "baseline_homes": series.iter().filter(|s| s.baseline_home.is_some()).count(),
            "november_homes": series.iter().filter(|s| s.november_home.is_some()).count(),
        }),
    )
}

fn load_homes(homes_dir: &Path) -> Result<(Vec<HomeSeries>, StudyWindow, PathBuf)> {
    let manifest = upstream_manifest(homes_dir, "homes")?;
    let path = upstream(homes_dir, HOMES_FILE, "homes")?;
    let window = manifest_window(&manifest)?;
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let series = read_homes_csv(BufReader::new(file), &window)?;
    Ok((series, window, path))
}

/// Classifies migrations and writes records, OD matrices and net rates.
pub fn cmd_migrate(homes_dir: &Path, comunas: &Path, out: &Path) -> Result<RunManifest> {
    let (series, window, homes_path) = load_homes(homes_dir)?;
    ensure_dir(out)?;
    let mut rec = StageRecorder::new("migrate", json!({ "window": window.params() }));
    rec.input("homes", &homes_path)?;
    rec.input("comunas", comunas)?;
    let table = load_comunas(comunas)?;
    let (records, stats) = rec.time("classify", || classify_all(&series, &table))?;
    rec.time("matrices", || -> Result<()> {
        write_records_csv(create(&out.join(RECORDS_FILE))?, &records)?;
        write_migration_tables(out, &records, &table)
    })?;
    rec.finish(out, &[RECORDS_FILE, OD_COUNTS_FILE, OD_PCT_FILE, NET_RATES_FILE], None, json!({ "classify": stats }))
}

/// Writes `od_counts.csv`, `od_pct.csv` and `net_rates.csv` for one set of records.
fn write_migration_tables(
    out: &Path,
    records: &[crate::migration::MigrationRecord],
    table: &crate::model::ComunaTable,
) -> Result<()> {
    let mut od = Vec::new();
    for direction in [Direction::Emigration, Direction::Immigration] {
        for level in [Level::Comuna, Level::Region] {
            od.push(build_od(records, direction, level, table)?);
        }
    }
    write_od_csv(create(&out.join(OD_COUNTS_FILE))?, &od.iter().collect::<Vec<_>>())?;
    let names: Vec<String> = od.iter().map(|m| format!("{}_{}", m.direction.as_str(), m.level.as_str())).collect();
    let pct = od.iter().map(emigration_pct).collect::<Result<Vec<_>>>()?;
    let labelled: Vec<(&str, &crate::migration::PctMatrix)> = names.iter().map(String::as_str).zip(&pct).collect();
    write_pct_csv(create(&out.join(OD_PCT_FILE))?, &labelled)?;
    let rates = net_rates(&od[0], &od[2], table)?;
    let mut w = csv::Writer::from_writer(create(&out.join(NET_RATES_FILE))?);
    for r in &rates {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Builds the daily mobility indices and their quarantine strata.
pub fn cmd_indices(
    xdr: &[PathBuf],
    antennas: &Path,
    homes_dir: &Path,
    quarantines: Option<&Path>,
    opts: &IngestOptions,
    out: &Path,
) -> Result<RunManifest> {
    let (series, window, homes_path) = load_homes(homes_dir)?;
    ensure_dir(out)?;
    let mut rec = StageRecorder::new(
        "indices",
        json!({ "window": window.params(), "max_drop_fraction": opts.max_drop_fraction }),
    );
    xdr_inputs(&mut rec, xdr)?;
    rec.input("antennas", antennas)?;
    rec.input("homes", &homes_path)?;
    let schedule = match quarantines {
        Some(q) => {
            rec.input("quarantines", q)?;
            load_quarantines(q)?
        }
        None => QuarantineSchedule::default(),
    };
    let registry = load_antennas(antennas)?;
    let homes: HashMap<_, _> = home_lookup(&series);
    let comunas = home_comunas(&homes);
    let mut shards: Vec<MobilityAccumulator> = (0..SHARDS)
        .map(|_| MobilityAccumulator::new(&window, &registry, &homes, comunas.iter().copied()))
        .collect();
    let ingest = rec.time("ingest", || stream_sharded(xdr, &window, &registry, &mut shards, |acc, ev| acc.observe(ev)))?;
    ingest.check_drop_rate(opts.max_drop_fraction)?;
    let (counts, mstats) = rec.time("merge", || -> Result<_> {
        let mut it = shards.into_iter().map(MobilityAccumulator::finish);
        let (mut counts, mut stats) = it.next().expect("at least one shard");
        for (c, s) in it {
            counts.merge(&c)?;
            stats.merge(&s);
        }
        Ok((counts, stats))
    })?;
    let set = rec.time("series", || build_index_series(&counts, &window))?;
    let rows = summary_rows(&set, &schedule, &window);
    write_index_daily(create(&out.join(INDEX_DAILY_FILE))?, &set, &window)?;
    write_index_summary(create(&out.join(INDEX_SUMMARY_FILE))?, &rows)?;
    let MobilityStats { events, device_days, device_days_without_home, events_unknown_device } = mstats;
    rec.finish(
        out,
        &[INDEX_DAILY_FILE, INDEX_SUMMARY_FILE],
        Some(ingest),
        json!({
            "events": events,
            "device_days": device_days,
            "device_days_without_home": device_days_without_home,
            "events_unknown_device": events_unknown_device,
            "comunas": set.series.len(),
            "no_baseline": set.no_baseline,
            "quarantine_overlaps_merged": schedule.merged_overlaps(),
        }),
    )
}

/// Re-encodes an XDR log, dropping invalid rows. Returns the row accounting.
pub fn cmd_convert(
    input: &Path,
    antennas: &Path,
    window: &StudyWindow,
    format: XdrFormat,
    output: &Path,
) -> Result<IngestStats> {
    let registry = load_antennas(antennas)?;
    let mut reader = open_xdr(input, window, &registry)?;
    let mut writer = XdrWriter::create(output, format, window)?;
    for ev in reader.by_ref() {
        writer.write(&ev?)?;
    }
    writer.finish()?;
    Ok(reader.stats())
}
