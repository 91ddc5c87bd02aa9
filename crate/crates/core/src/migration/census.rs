use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Direction, MigrationRecord};
use crate::error::{Error, Result};
use crate::model::{ComunaTable, METROPOLITAN_REGION};
use crate::stats::{pearson, Correlation};

pub const SCL_LABEL: &str = "SCL";
pub const COUNTRY_LABEL: &str = "COUNTRY";

/// The four flow granularities compared against census figures. Within-capital
/// moves are never part of any of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensusLevel {
    /// Each region ⇄ the capital as a whole.
    RegionsScl,
    /// Each comuna outside the capital ⇄ the capital as a whole.
    ComunasScl,
    /// The rest of the country as a whole ⇄ each capital comuna.
    CountrySclComunas,
    /// Each comuna outside the capital ⇄ each capital comuna.
    ComunasSclComunas,
}

impl CensusLevel {
    pub const ALL: [CensusLevel; 4] = [
        CensusLevel::RegionsScl,
        CensusLevel::ComunasScl,
        CensusLevel::CountrySclComunas,
        CensusLevel::ComunasSclComunas,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CensusLevel::RegionsScl => "regions_scl",
            CensusLevel::ComunasScl => "comunas_scl",
            CensusLevel::CountrySclComunas => "country_scl_comunas",
            CensusLevel::ComunasSclComunas => "comunas_scl_comunas",
        }
    }
}

impl std::str::FromStr for CensusLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CensusLevel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::schema(format!("unknown census level `{s}`")))
    }
}

/// One directed flow. Labels are comuna or region codes, or the literal
/// `SCL` / `COUNTRY` aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub level: CensusLevel,
    pub direction: Direction,
    pub origin: String,
    pub destination: String,
    pub flow: f64,
}

/// Migrant device counts of `records` at one census granularity.
pub fn model_flows(records: &[MigrationRecord], comunas: &ComunaTable, level: CensusLevel) -> Vec<FlowRow> {
    let mut acc: BTreeMap<(Direction, String, String), u64> = BTreeMap::new();
    for r in records {
        let from_scl = comunas.is_scl(r.origin_comuna);
        if from_scl && r.migrated {
            let (o, d) = match level {
                CensusLevel::RegionsScl => (SCL_LABEL.to_string(), r.destination_region.to_string()),
                CensusLevel::ComunasScl => (SCL_LABEL.to_string(), r.destination_comuna.to_string()),
                CensusLevel::CountrySclComunas => (r.origin_comuna.to_string(), COUNTRY_LABEL.to_string()),
                CensusLevel::ComunasSclComunas => (r.origin_comuna.to_string(), r.destination_comuna.to_string()),
            };
            *acc.entry((Direction::Emigration, o, d)).or_default() += 1;
        } else if r.origin_region != METROPOLITAN_REGION && comunas.is_scl(r.destination_comuna) {
            let (o, d) = match level {
                CensusLevel::RegionsScl => (r.origin_region.to_string(), SCL_LABEL.to_string()),
                CensusLevel::ComunasScl => (r.origin_comuna.to_string(), SCL_LABEL.to_string()),
                CensusLevel::CountrySclComunas => (COUNTRY_LABEL.to_string(), r.destination_comuna.to_string()),
                CensusLevel::ComunasSclComunas => (r.origin_comuna.to_string(), r.destination_comuna.to_string()),
            };
            *acc.entry((Direction::Immigration, o, d)).or_default() += 1;
        }
    }
    acc.into_iter()
        .map(|((direction, origin, destination), n)| FlowRow { level, direction, origin, destination, flow: n as f64 })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusReport {
    pub level: CensusLevel,
    pub immigration: Correlation,
    pub emigration: Correlation,
}

fn direction_correlation(
    model: &[FlowRow],
    census: &[FlowRow],
    level: CensusLevel,
    direction: Direction,
) -> Result<Correlation> {
    let collect = |rows: &[FlowRow]| -> BTreeMap<(String, String), f64> {
        let mut m = BTreeMap::new();
        for r in rows.iter().filter(|r| r.level == level && r.direction == direction) {
            *m.entry((r.origin.clone(), r.destination.clone())).or_insert(0.0) += r.flow;
        }
        m
    };
    let (a, b) = (collect(model), collect(census));
    let keys: BTreeSet<&(String, String)> = a.keys().chain(b.keys()).collect();
    if keys.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} {} pairs at level {}, at least 3 needed",
            keys.len(),
            direction.as_str(),
            level.as_str()
        )));
    }
    let x: Vec<f64> = keys.iter().map(|k| a.get(*k).copied().unwrap_or(0.0)).collect();
    let y: Vec<f64> = keys.iter().map(|k| b.get(*k).copied().unwrap_or(0.0)).collect();
    pearson(&x, &y)
}

/// Pearson correlation between model and census flows per direction, over
/// the union of flow keys with absent flows counted as zero.
pub fn census_validation(model: &[FlowRow], census: &[FlowRow], level: CensusLevel) -> Result<CensusReport> {
    Ok(CensusReport {
        level,
        immigration: direction_correlation(model, census, level, Direction::Immigration)?,
        emigration: direction_correlation(model, census, level, Direction::Emigration)?,
    })
}

/// Reads `level,direction,origin,destination,flow` rows.
pub fn parse_census<R: Read>(source: R) -> Result<Vec<FlowRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::Fields).from_reader(source);
    let header = reader.headers()?;
    if header.iter().ne(["level", "direction", "origin", "destination", "flow"]) {
        return Err(Error::schema("census header must be `level,direction,origin,destination,flow`"));
    }
    let rows: Vec<FlowRow> = reader.deserialize().collect::<Result<_, csv::Error>>()?;
    if let Some(r) = rows.iter().find(|r| !(r.flow.is_finite() && r.flow >= 0.0)) {
        return Err(Error::validation(format!("census flow {} -> {} is not a nonnegative number", r.origin, r.destination)));
    }
    Ok(rows)
}

pub fn read_census(path: &Path) -> Result<Vec<FlowRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_census(file)
}
