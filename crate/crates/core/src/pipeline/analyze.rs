use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::{
    create, ensure_dir, manifest_window, upstream, upstream_manifest, write_json, write_migration_tables,
    RunManifest, StageRecorder, INDEX_SUMMARY_FILE, NET_RATES_FILE, OD_COUNTS_FILE, OD_PCT_FILE, RECORDS_FILE,
};
use crate::error::{Error, Result};
use crate::ingest::load_comunas;
use crate::migration::{
    build_od, census_validation, density_weighted_destination, destination_divergence, emigration_pct,
    gravity_rank, hosting_impact, icvu_tradeoff, matrix_difference, model_flows, net_migration_rate, net_rates,
    read_census, read_records_csv, region_aggregates, rurality_shift, scl_centroid, scl_expansion_factor,
    weighted_destination_rurality, zscore_row_filter, CensusLevel, CensusReport, Direction, Level, MigrationRecord,
    OdMatrix, PctMatrix, RegionFlow, DEFAULT_Z_THRESHOLD,
};
use crate::mobility::read_index_summary;
use crate::model::{ComunaId, ComunaTable};
use crate::stats::{ols, pearson, quintile_share, quintile_split, welch_t, Correlation, RegressionFit, WelchTest};

pub const SUMMARY_FILE: &str = "summary.json";
const DIVERGENCE_FILE: &str = "divergence.csv";
const RURALITY_FILE: &str = "rurality_shift.csv";
const ICVU_FILE: &str = "icvu_tradeoff.csv";
const DENSITY_FILE: &str = "destination_density.csv";
const GRAVITY_FILE: &str = "gravity.csv";
const HOSTING_FILE: &str = "hosting.csv";
const CENSUS_FILE: &str = "census_validation.json";

/// Inputs of the analysis stage. Each migration directory holds one year's
/// `migrate` outputs; the latest year is compared against every earlier one.
#[derive(Clone, Debug, Default)]
pub struct AnalyzeInputs {
    pub migration_dirs: Vec<PathBuf>,
    pub comunas: PathBuf,
    pub census: Option<PathBuf>,
    pub indices_dir: Option<PathBuf>,
}

struct Year {
    year: i32,
    records: Vec<MigrationRecord>,
    em_comuna: OdMatrix,
    em_region: OdMatrix,
    im_comuna: OdMatrix,
    em_pct: PctMatrix,
}

impl Year {
    fn load(dir: &Path, table: &ComunaTable, rec: &mut StageRecorder) -> Result<Year> {
        let manifest = upstream_manifest(dir, "migrate")?;
        if manifest.stage != "migrate" {
            return Err(Error::PipelineOrder { required: "migrate", missing: dir.join(RECORDS_FILE) });
        }
        let path = upstream(dir, RECORDS_FILE, "migrate")?;
        let year = manifest_window(&manifest)?.year();
        rec.input(&format!("records[{year}]"), &path)?;
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let records = read_records_csv(BufReader::new(file))?;
        let em_comuna = build_od(&records, Direction::Emigration, Level::Comuna, table)?;
        let em_region = build_od(&records, Direction::Emigration, Level::Region, table)?;
        let im_comuna = build_od(&records, Direction::Immigration, Level::Comuna, table)?;
        let em_pct = emigration_pct(&em_comuna)?;
        Ok(Year { year, records, em_comuna, em_region, im_comuna, em_pct })
    }
}

#[derive(Serialize)]
struct YearMigration {
    year: i32,
    classified: usize,
    migrated: usize,
    migration_rate_pct: f64,
    emigrants_from_scl: u64,
    immigrants_to_scl: u64,
    /// Emigration percentage of capital comunas regressed on income decile.
    emigration_vs_decile: Option<RegressionFit>,
}

#[derive(Serialize)]
struct NetSummary {
    immigrants: f64,
    emigrants: f64,
    net_flow: f64,
    population: f64,
    rate_pct: Option<f64>,
}

#[derive(Serialize)]
struct Comparison<T> {
    year: i32,
    base_year: i32,
    #[serde(flatten)]
    value: T,
}

#[derive(Serialize)]
struct MeanOverOrigins {
    mean: Option<f64>,
    n: usize,
    skipped: Vec<u32>,
}

impl MeanOverOrigins {
    fn of(values: &BTreeMap<u32, f64>, skipped: &[u32]) -> Self {
        let n = values.len();
        let mean = (n > 0).then(|| values.values().sum::<f64>() / n as f64);
        MeanOverOrigins { mean, n, skipped: skipped.to_vec() }
    }
}

#[derive(Serialize)]
struct ZscoreRows {
    rows: Vec<u32>,
    threshold: f64,
}

#[derive(Serialize)]
struct HostingRow {
    year: i32,
    region: u32,
    pct: f64,
    change_pct: Option<f64>,
}

#[derive(Serialize)]
struct MobilitySummary {
    comunas: usize,
    mean_reduction_vs_decile: Option<RegressionFit>,
    quarantine_mean_vs_decile: Option<RegressionFit>,
    free_mean_vs_decile: Option<RegressionFit>,
    /// Share of the summed absolute mean reduction owed to the top income quintile.
    top_quintile_share_pct: Option<f64>,
    top_quintile_mean_reduction: Option<f64>,
    rest_mean_reduction: Option<f64>,
    welch_top_vs_rest: Option<WelchTest>,
    quarantine_mean_change: Option<f64>,
    free_mean_change: Option<f64>,
}

#[derive(Serialize)]
struct Summary {
    manifest_digest: String,
    target_year: i32,
    years: Vec<i32>,
    migration: Vec<YearMigration>,
    net_migration_scl: NetSummary,
    od_difference_rows: Vec<Comparison<ZscoreRows>>,
    divergence_km: Vec<Comparison<MeanOverOrigins>>,
    rurality_shift: Vec<Comparison<MeanOverOrigins>>,
    /// Destination density regressed on origin poverty.
    density_regression: Option<RegressionFit>,
    icvu_tradeoff: MeanOverOrigins,
    gravity: Vec<RegionFlow>,
    gravity_inflow_correlation: Option<Correlation>,
    hosting: Vec<HostingRow>,
    mobility: Option<MobilitySummary>,
    census_validation: Option<Vec<CensusReport>>,
    notes: Vec<String>,
}

/// Keeps data-dependent failures as notes and propagates everything else.
fn soft<T>(r: Result<T>, what: &str, notes: &mut Vec<String>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e @ (Error::InsufficientData(_) | Error::DegenerateData(_) | Error::DegenerateGeometry(_))) => {
            notes.push(format!("{what}: {e}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn emigration_vs_decile(y: &Year, table: &ComunaTable, notes: &mut Vec<String>) -> Result<Option<RegressionFit>> {
    let (mut x, mut v) = (Vec::new(), Vec::new());
    for (origin, base) in y.em_comuna.bases() {
        if base > 0 {
            x.push(table.require(ComunaId(origin))?.income_decile);
            v.push(100.0 * y.em_comuna.row_total(origin) as f64 / base as f64);
        }
    }
    soft(ols(&x, &v), &format!("emigration vs decile {}", y.year), notes)
}

fn mobility_summary(
    dir: &Path,
    table: &ComunaTable,
    rec: &mut StageRecorder,
    notes: &mut Vec<String>,
) -> Result<MobilitySummary> {
    let path = upstream(dir, INDEX_SUMMARY_FILE, "indices")?;
    rec.input("index_summary", &path)?;
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let rows: Vec<_> = read_index_summary(BufReader::new(file))?
        .into_iter()
        .filter(|r| table.is_scl(r.comuna))
        .collect();
    let regress = |pick: &dyn Fn(&crate::mobility::SummaryRow) -> Option<f64>,
                   what: &str,
                   notes: &mut Vec<String>|
     -> Result<Option<RegressionFit>> {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for r in &rows {
            if let Some(v) = pick(r) {
                x.push(table.require(r.comuna)?.income_decile);
                y.push(v);
            }
        }
        soft(ols(&x, &y), what, notes)
    };
    let mean_reduction_vs_decile = regress(&|r| r.mean_reduction, "mean reduction vs decile", notes)?;
    let quarantine_mean_vs_decile = regress(&|r| r.quarantine_mean, "quarantine change vs decile", notes)?;
    let free_mean_vs_decile = regress(&|r| r.free_mean, "free change vs decile", notes)?;

    let reductions: BTreeMap<ComunaId, f64> =
        rows.iter().filter_map(|r| r.mean_reduction.map(|v| (r.comuna, v))).collect();
    let deciles: BTreeMap<ComunaId, f64> =
        reductions.keys().map(|&c| Ok((c, table.require(c)?.income_decile))).collect::<Result<_>>()?;
    let share = soft(quintile_share(&reductions, &deciles), "top quintile share", notes)?;
    let (top, rest) = quintile_split(&reductions, &deciles);
    let welch = soft(welch_t(&top, &rest), "top quintile welch test", notes)?;
    let q: Vec<f64> = rows.iter().filter_map(|r| r.quarantine_mean).collect();
    let f: Vec<f64> = rows.iter().filter_map(|r| r.free_mean).collect();
    Ok(MobilitySummary {
        comunas: rows.len(),
        mean_reduction_vs_decile,
        quarantine_mean_vs_decile,
        free_mean_vs_decile,
        top_quintile_share_pct: share,
        top_quintile_mean_reduction: mean(&top),
        rest_mean_reduction: mean(&rest),
        welch_top_vs_rest: welch,
        quarantine_mean_change: mean(&q),
        free_mean_change: mean(&f),
    })
}

/// Runs every migration and mobility analysis and writes the tables plus
/// `summary.json`. Each number in the summary is recomputed from the
/// intermediate CSVs of earlier stages.
pub fn cmd_analyze(inputs: &AnalyzeInputs, out: &Path) -> Result<RunManifest> {
    if inputs.migration_dirs.is_empty() {
        return Err(Error::validation("at least one migration directory is required"));
    }
    for dir in &inputs.migration_dirs {
        upstream(dir, RECORDS_FILE, "migrate")?;
        upstream_manifest(dir, "migrate")?;
    }
    if let Some(dir) = &inputs.indices_dir {
        upstream(dir, INDEX_SUMMARY_FILE, "indices")?;
    }
    ensure_dir(out)?;
    let mut rec = StageRecorder::new("analyze", json!({ "z_threshold": DEFAULT_Z_THRESHOLD }));
    rec.input("comunas", &inputs.comunas)?;
    let table = load_comunas(&inputs.comunas)?;
    let mut years = Vec::new();
    for dir in &inputs.migration_dirs {
        years.push(Year::load(dir, &table, &mut rec)?);
    }
    years.sort_by_key(|y| y.year);
    if years.windows(2).any(|w| w[0].year == w[1].year) {
        return Err(Error::validation("two migration directories cover the same year"));
    }
    let target = years.last().expect("non-empty");
    let bases = &years[..years.len() - 1];
    let mut notes = Vec::new();
    let mut outputs: Vec<&str> = vec![OD_COUNTS_FILE, OD_PCT_FILE, NET_RATES_FILE];

    write_migration_tables(out, &target.records, &table)?;

    let mut migration = Vec::new();
    for y in &years {
        let migrated = y.records.iter().filter(|r| r.migrated).count();
        migration.push(YearMigration {
            year: y.year,
            classified: y.records.len(),
            migrated,
            migration_rate_pct: if y.records.is_empty() { 0.0 } else { 100.0 * migrated as f64 / y.records.len() as f64 },
            emigrants_from_scl: y.em_comuna.total(),
            immigrants_to_scl: y.im_comuna.total(),
            emigration_vs_decile: emigration_vs_decile(y, &table, &mut notes)?,
        });
    }

    let rates = net_rates(&target.em_comuna, &target.im_comuna, &table)?;
    let (imm, em, pop) = rates
        .iter()
        .fold((0.0, 0.0, 0.0), |a, r| (a.0 + r.immigrants, a.1 + r.emigrants, a.2 + r.population));
    let net_migration_scl = NetSummary {
        immigrants: imm,
        emigrants: em,
        net_flow: imm - em,
        population: pop,
        rate_pct: if pop > 0.0 { Some(net_migration_rate(imm, em, pop)?) } else { None },
    };

    let centroid = |id: u32| table.get(ComunaId(id)).map(|p| (p.centroid_lat, p.centroid_lon));
    let mut od_difference_rows = Vec::new();
    let mut divergence_km = Vec::new();
    let mut rurality = Vec::new();
    let mut div_csv = create(&out.join(DIVERGENCE_FILE))?;
    writeln!(div_csv, "year,base_year,origin,km")?;
    let mut rur_csv = create(&out.join(RURALITY_FILE))?;
    writeln!(rur_csv, "year,base_year,origin,rurality,base_rurality,delta")?;
    let r_target = weighted_destination_rurality(&target.em_pct, &table)?;
    for b in bases {
        let diff = matrix_difference(&b.em_pct, &target.em_pct);
        od_difference_rows.push(Comparison {
            year: target.year,
            base_year: b.year,
            value: ZscoreRows { rows: zscore_row_filter(&diff, DEFAULT_Z_THRESHOLD), threshold: DEFAULT_Z_THRESHOLD },
        });
        let d = destination_divergence(&target.em_pct, &b.em_pct, centroid)?;
        for (o, km) in &d.values {
            writeln!(div_csv, "{},{},{o},{km}", target.year, b.year)?;
        }
        divergence_km.push(Comparison {
            year: target.year,
            base_year: b.year,
            value: MeanOverOrigins::of(&d.values, &d.skipped),
        });
        let shift = rurality_shift(&target.em_pct, &b.em_pct, &table)?;
        let r_base = weighted_destination_rurality(&b.em_pct, &table)?;
        for (o, delta) in &shift.values {
            writeln!(rur_csv, "{},{},{o},{},{},{delta}", target.year, b.year, r_target.values[o], r_base.values[o])?;
        }
        rurality.push(Comparison {
            year: target.year,
            base_year: b.year,
            value: MeanOverOrigins::of(&shift.values, &shift.skipped),
        });
    }
    div_csv.flush()?;
    rur_csv.flush()?;
    outputs.extend([DIVERGENCE_FILE, RURALITY_FILE]);

    let mut icvu_csv = create(&out.join(ICVU_FILE))?;
    writeln!(icvu_csv, "year,origin,icvu_difference")?;
    let mut dens_csv = create(&out.join(DENSITY_FILE))?;
    writeln!(dens_csv, "year,origin,poverty_pct,destination_density")?;
    let mut icvu_target = None;
    let mut density_regression = None;
    for y in &years {
        let icvu = icvu_tradeoff(&y.em_pct, &table)?;
        for (o, v) in &icvu.values {
            writeln!(icvu_csv, "{},{o},{v}", y.year)?;
        }
        let dens = density_weighted_destination(&y.em_pct, &table)?;
        let (mut pov, mut den) = (Vec::new(), Vec::new());
        for (o, v) in &dens.values {
            let p = table.require(ComunaId(*o))?.poverty_pct;
            writeln!(dens_csv, "{},{o},{p},{v}", y.year)?;
            pov.push(p);
            den.push(*v);
        }
        if y.year == target.year {
            icvu_target = Some(MeanOverOrigins::of(&icvu.values, &icvu.skipped));
            density_regression = soft(ols(&pov, &den), "poverty vs destination density", &mut notes)?;
        }
    }
    icvu_csv.flush()?;
    dens_csv.flush()?;
    outputs.extend([ICVU_FILE, DENSITY_FILE]);

    let regions = region_aggregates(&table);
    let scl = scl_centroid(&table)?;
    let mut grav_csv = create(&out.join(GRAVITY_FILE))?;
    writeln!(grav_csv, "year,rank,region,inflow_from_scl,population,distance_km,gravity_score")?;
    let mut host_csv = create(&out.join(HOSTING_FILE))?;
    writeln!(host_csv, "year,region,pct,change_pct")?;
    let mut gravity = Vec::new();
    let mut hosting = Vec::new();
    let mut previous: Option<BTreeMap<u32, f64>> = None;
    for y in &years {
        let inflows: BTreeMap<u32, u64> =
            y.em_region.destinations().iter().map(|&d| (d, y.em_region.column_total(d))).collect();
        let ranked = gravity_rank(&regions, &inflows, scl)?;
        for (k, r) in ranked.iter().enumerate() {
            writeln!(
                grav_csv,
                "{},{},{},{},{},{},{}",
                y.year,
                k + 1,
                r.region,
                r.inflow_from_scl,
                r.population,
                r.distance_km,
                r.gravity_score
            )?;
        }
        let expansion = soft(scl_expansion_factor(&y.em_comuna, &table), &format!("expansion {}", y.year), &mut notes)?;
        let impact = match expansion {
            Some(e) => hosting_impact(&y.em_region, &regions, e)?,
            None => BTreeMap::new(),
        };
        for (&region, &pct) in &impact {
            let change = previous.as_ref().and_then(|p| p.get(&region)).map(|p| pct - p);
            writeln!(host_csv, "{},{region},{pct},{}", y.year, opt(change))?;
            if y.year == target.year {
                hosting.push(HostingRow { year: y.year, region, pct, change_pct: change });
            }
        }
        previous = Some(impact);
        if y.year == target.year {
            gravity = ranked;
        }
    }
    grav_csv.flush()?;
    host_csv.flush()?;
    outputs.extend([GRAVITY_FILE, HOSTING_FILE]);
    let gx: Vec<f64> = gravity.iter().map(|r| r.gravity_score).collect();
    let gy: Vec<f64> = gravity.iter().map(|r| r.inflow_from_scl as f64).collect();
    let gravity_inflow_correlation = soft(pearson(&gx, &gy), "gravity vs inflow", &mut notes)?;

    let mobility = match &inputs.indices_dir {
        Some(dir) => Some(mobility_summary(dir, &table, &mut rec, &mut notes)?),
        None => None,
    };

    let census_validation = match &inputs.census {
        Some(path) => {
            rec.input("census", path)?;
            let census = read_census(path)?;
            let levels: BTreeSet<CensusLevel> = census.iter().map(|r| r.level).collect();
            let mut reports = Vec::new();
            for level in levels {
                let model = model_flows(&target.records, &table, level);
                if let Some(r) =
                    soft(census_validation(&model, &census, level), &format!("census {}", level.as_str()), &mut notes)?
                {
                    reports.push(r);
                }
            }
            write_json(&out.join(CENSUS_FILE), &reports)?;
            outputs.push(CENSUS_FILE);
            Some(reports)
        }
        None => None,
    };

    let summary = Summary {
        manifest_digest: rec.digest(),
        target_year: target.year,
        years: years.iter().map(|y| y.year).collect(),
        migration,
        net_migration_scl,
        od_difference_rows,
        divergence_km,
        rurality_shift: rurality,
        density_regression,
        icvu_tradeoff: icvu_target.expect("target year analysed"),
        gravity,
        gravity_inflow_correlation,
        hosting,
        mobility,
        census_validation,
        notes,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    outputs.push(SUMMARY_FILE);
    let counters = json!({ "years": summary.years, "notes": summary.notes.len() });
    rec.finish(out, &outputs, None, counters)
}
