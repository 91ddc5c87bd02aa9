//! Region-level relocation classification and origin–destination matrices.
//!
//! A device migrated when the region of its November modal home differs from
//! the region of its March baseline home. Emigration matrices have the
//! capital's comunas as origins; immigration matrices have origins outside
//! the metropolitan region and capital comunas as destinations.

mod analytics;
mod census;
mod io;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::home::HomeSeries;
use crate::model::{ComunaId, ComunaTable, DeviceId, RegionId, METROPOLITAN_REGION};

pub use analytics::{
    destination_divergence, density_weighted_destination, gravity_rank, hosting_impact, icvu_tradeoff,
    region_aggregates, rurality_shift, scl_centroid, scl_expansion_factor, weighted_destination_rurality,
    Divergence, OriginValues, RegionAggregate, RegionFlow,
};
pub use census::{
    census_validation, model_flows, parse_census, read_census, CensusLevel, CensusReport, FlowRow, COUNTRY_LABEL,
    SCL_LABEL,
};
pub use io::{read_records_csv, write_od_csv, write_pct_csv, write_records_csv, RECORDS_CSV_HEADER};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MigrationRecord {
    pub device: DeviceId,
    pub origin_comuna: ComunaId,
    pub destination_comuna: ComunaId,
    pub origin_region: RegionId,
    pub destination_region: RegionId,
    pub migrated: bool,
}

/// Devices left out of classification, by reason.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifyStats {
    pub classified: u64,
    pub migrated: u64,
    pub missing_baseline: u64,
    pub missing_november: u64,
}

/// Record for one device, or `None` if either home is unresolved.
pub fn classify(series: &HomeSeries, comunas: &ComunaTable) -> Result<Option<MigrationRecord>> {
    let (Some(origin), Some(destination)) = (series.baseline_home, series.november_home) else {
        return Ok(None);
    };
    let origin_region = comunas.require(origin)?.region;
    let destination_region = comunas.require(destination)?.region;
    Ok(Some(MigrationRecord {
        device: series.device,
        origin_comuna: origin,
        destination_comuna: destination,
        origin_region,
        destination_region,
        migrated: origin_region != destination_region,
    }))
}

/// Classifies every series in parallel, keeping input order.
pub fn classify_all(series: &[HomeSeries], comunas: &ComunaTable) -> Result<(Vec<MigrationRecord>, ClassifyStats)> {
    let records: Vec<Option<MigrationRecord>> =
        series.par_iter().map(|s| classify(s, comunas)).collect::<Result<_>>()?;
    let mut stats = ClassifyStats::default();
    for (s, r) in series.iter().zip(&records) {
        match r {
            Some(r) => {
                stats.classified += 1;
                stats.migrated += r.migrated as u64;
            }
            None if s.baseline_home.is_none() => stats.missing_baseline += 1,
            None => stats.missing_november += 1,
        }
    }
    Ok((records.into_iter().flatten().collect(), stats))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Emigration,
    Immigration,
}

/// Granularity of the side of the matrix outside the capital.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Comuna,
    Region,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Emigration => "emigration",
            Direction::Immigration => "immigration",
        }
    }
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Comuna => "comuna",
            Level::Region => "region",
        }
    }
}

/// Origin × destination migrant counts. Labels are comuna or region codes
/// depending on the direction and level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OdMatrix {
    pub direction: Direction,
    pub level: Level,
    origins: Vec<u32>,
    destinations: Vec<u32>,
    counts: Vec<u64>,
    origin_base: Vec<u64>,
}

impl OdMatrix {
    /// Builds a matrix from sparse cells; labels are sorted and deduplicated.
    pub fn new(
        direction: Direction,
        level: Level,
        base: &BTreeMap<u32, u64>,
        cells: &BTreeMap<(u32, u32), u64>,
    ) -> Result<Self> {
        let origins: Vec<u32> = base.keys().copied().collect();
        let destinations: Vec<u32> = cells.keys().map(|k| k.1).collect::<BTreeSet<_>>().into_iter().collect();
        let mut counts = vec![0u64; origins.len() * destinations.len()];
        for (&(o, d), &c) in cells {
            let i = origins
                .binary_search(&o)
                .map_err(|_| Error::validation(format!("cell origin {o} has no base")))?;
            let j = destinations.binary_search(&d).expect("destination collected above");
            counts[i * destinations.len() + j] = c;
        }
        let origin_base: Vec<u64> = base.values().copied().collect();
        let m = OdMatrix { direction, level, origins, destinations, counts, origin_base };
        for (i, &o) in m.origins.iter().enumerate() {
            if m.row_total_at(i) > m.origin_base[i] {
                return Err(Error::validation(format!("origin {o} has more migrants than devices")));
            }
        }
        Ok(m)
    }

    pub fn origins(&self) -> &[u32] {
        &self.origins
    }

    pub fn destinations(&self) -> &[u32] {
        &self.destinations
    }

    pub fn count(&self, origin: u32, destination: u32) -> u64 {
        match (self.origins.binary_search(&origin), self.destinations.binary_search(&destination)) {
            (Ok(i), Ok(j)) => self.counts[i * self.destinations.len() + j],
            _ => 0,
        }
    }

    pub fn row(&self, origin: u32) -> Option<&[u64]> {
        let i = self.origins.binary_search(&origin).ok()?;
        let n = self.destinations.len();
        Some(&self.counts[i * n..(i + 1) * n])
    }

    fn row_total_at(&self, i: usize) -> u64 {
        let n = self.destinations.len();
        self.counts[i * n..(i + 1) * n].iter().sum()
    }

    pub fn row_total(&self, origin: u32) -> u64 {
        self.row(origin).map_or(0, |r| r.iter().sum())
    }

    pub fn column_total(&self, destination: u32) -> u64 {
        let Ok(j) = self.destinations.binary_search(&destination) else {
            return 0;
        };
        let n = self.destinations.len();
        (0..self.origins.len()).map(|i| self.counts[i * n + j]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn base(&self, origin: u32) -> u64 {
        self.origins.binary_search(&origin).map_or(0, |i| self.origin_base[i])
    }

    /// Nonzero cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (u32, u32, u64)> + '_ {
        let n = self.destinations.len();
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(move |(k, &c)| (self.origins[k / n], self.destinations[k % n], c))
    }

    pub fn bases(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.origins.iter().copied().zip(self.origin_base.iter().copied())
    }
}

fn side_label(comuna: ComunaId, region: RegionId, level: Level) -> u32 {
    match level {
        Level::Comuna => comuna.0,
        Level::Region => region.0,
    }
}

/// Emigration: origins are capital comunas, counting migrated devices.
/// Immigration: origins are outside the metropolitan region, counting devices
/// whose November home is a capital comuna. Bases count classified devices
/// homed at each origin in March.
pub fn build_od(records: &[MigrationRecord], direction: Direction, level: Level, comunas: &ComunaTable) -> Result<OdMatrix> {
    type Acc = (BTreeMap<u32, u64>, BTreeMap<(u32, u32), u64>);
    let (base, cells) = records
        .par_iter()
        .fold(
            || (BTreeMap::new(), BTreeMap::new()),
            |(mut base, mut cells): Acc, r| {
                match direction {
                    Direction::Emigration if comunas.is_scl(r.origin_comuna) => {
                        *base.entry(r.origin_comuna.0).or_default() += 1;
                        if r.migrated {
                            let d = side_label(r.destination_comuna, r.destination_region, level);
                            *cells.entry((r.origin_comuna.0, d)).or_default() += 1;
                        }
                    }
                    Direction::Immigration if r.origin_region != METROPOLITAN_REGION => {
                        let o = side_label(r.origin_comuna, r.origin_region, level);
                        *base.entry(o).or_default() += 1;
                        if comunas.is_scl(r.destination_comuna) {
                            *cells.entry((o, r.destination_comuna.0)).or_default() += 1;
                        }
                    }
                    _ => {}
                }
                (base, cells)
            },
        )
        .reduce(
            || (BTreeMap::new(), BTreeMap::new()),
            |(mut b1, mut c1), (b2, c2)| {
                for (k, v) in b2 {
                    *b1.entry(k).or_default() += v;
                }
                for (k, v) in c2 {
                    *c1.entry(k).or_default() += v;
                }
                (b1, c1)
            },
        );
    OdMatrix::new(direction, level, &base, &cells)
}

/// Dense real-valued matrix with labelled rows and columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PctMatrix {
    pub rows: Vec<u32>,
    pub cols: Vec<u32>,
    pub values: Vec<f64>,
}

impl PctMatrix {
    pub fn get(&self, row: u32, col: u32) -> f64 {
        match (self.rows.binary_search(&row), self.cols.binary_search(&col)) {
            (Ok(i), Ok(j)) => self.values[i * self.cols.len() + j],
            _ => 0.0,
        }
    }

    pub fn row(&self, row: u32) -> Option<&[f64]> {
        let i = self.rows.binary_search(&row).ok()?;
        let n = self.cols.len();
        Some(&self.values[i * n..(i + 1) * n])
    }

    /// `(row, col, value)` for every cell in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        let n = self.cols.len();
        self.values.iter().enumerate().map(move |(k, &v)| (self.rows[k / n], self.cols[k % n], v))
    }

    pub fn transpose(&self) -> PctMatrix {
        let (m, n) = (self.rows.len(), self.cols.len());
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                values[j * m + i] = self.values[i * n + j];
            }
        }
        PctMatrix { rows: self.cols.clone(), cols: self.rows.clone(), values }
    }
}

/// `100 · count(x, y) / base(x)`.
pub fn emigration_pct(od: &OdMatrix) -> Result<PctMatrix> {
    let n = od.destinations.len();
    let mut values = Vec::with_capacity(od.counts.len());
    for (i, &o) in od.origins.iter().enumerate() {
        let base = od.origin_base[i];
        if base == 0 {
            return Err(Error::DegenerateOrigin(o));
        }
        values.extend(od.counts[i * n..(i + 1) * n].iter().map(|&c| 100.0 * c as f64 / base as f64));
    }
    Ok(PctMatrix { rows: od.origins.clone(), cols: od.destinations.clone(), values })
}

/// Percent of population, inflow positive.
pub fn net_migration_rate(immigrants: f64, emigrants: f64, population: f64) -> Result<f64> {
    if !(population > 0.0) {
        return Err(Error::validation(format!("population must be positive, got {population}")));
    }
    Ok(100.0 * (immigrants - emigrants) / population)
}

/// Per-comuna net migration, with device counts expanded to persons by the
/// comuna's population over its March device base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetRate {
    pub comuna: ComunaId,
    pub device_base: u64,
    pub immigrant_devices: u64,
    pub emigrant_devices: u64,
    pub expansion: f64,
    pub immigrants: f64,
    pub emigrants: f64,
    pub population: f64,
    pub rate_pct: f64,
}

/// Net rates for every capital comuna with a nonzero device base.
pub fn net_rates(emigration: &OdMatrix, immigration: &OdMatrix, comunas: &ComunaTable) -> Result<Vec<NetRate>> {
    if emigration.direction != Direction::Emigration || immigration.direction != Direction::Immigration {
        return Err(Error::validation("net rates need an emigration and an immigration matrix"));
    }
    let mut out = Vec::new();
    for p in comunas.scl() {
        let base = emigration.base(p.id.0);
        if base == 0 {
            continue;
        }
        let expansion = p.population / base as f64;
        let imm = immigration.column_total(p.id.0);
        let em = emigration.row_total(p.id.0);
        let immigrants = imm as f64 * expansion;
        let emigrants = em as f64 * expansion;
        out.push(NetRate {
            comuna: p.id,
            device_base: base,
            immigrant_devices: imm,
            emigrant_devices: em,
            expansion,
            immigrants,
            emigrants,
            population: p.population,
            rate_pct: net_migration_rate(immigrants, emigrants, p.population)?,
        });
    }
    Ok(out)
}

/// Cell-wise `b − a` over the union of labels; absent cells count as zero.
pub fn matrix_difference(a: &PctMatrix, b: &PctMatrix) -> PctMatrix {
    let rows: Vec<u32> = a.rows.iter().chain(&b.rows).copied().collect::<BTreeSet<_>>().into_iter().collect();
    let cols: Vec<u32> = a.cols.iter().chain(&b.cols).copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut values = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            values.push(b.get(r, c) - a.get(r, c));
        }
    }
    PctMatrix { rows, cols, values }
}

pub const DEFAULT_Z_THRESHOLD: f64 = 1.96;

/// Rows with at least one cell whose z-score, against the mean and
/// population standard deviation of all cells, exceeds `threshold`.
pub fn zscore_row_filter(diff: &PctMatrix, threshold: f64) -> Vec<u32> {
    let n = diff.values.len();
    if n == 0 || diff.cols.is_empty() {
        return Vec::new();
    }
    let mean = diff.values.iter().sum::<f64>() / n as f64;
    let var = diff.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return Vec::new();
    }
    let m = diff.cols.len();
    diff.rows
        .iter()
        .enumerate()
        .filter(|(i, _)| diff.values[i * m..(i + 1) * m].iter().any(|v| (v - mean) / std > threshold))
        .map(|(_, &r)| r)
        .collect()
}

#[cfg(test)]
mod tests;
