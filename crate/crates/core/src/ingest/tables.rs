use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Antenna, AntennaId, ComunaId, ComunaProfile, ComunaTable, RegionId};

const COMUNA_HEADER: [&str; 12] = [
    "comuna_id",
    "name",
    "region_id",
    "in_scl",
    "income_decile",
    "poverty_pct",
    "rurality_pct",
    "population",
    "area_km2",
    "icvu",
    "centroid_lat",
    "centroid_lon",
];
const ANTENNA_HEADER: [&str; 4] = ["antenna_id", "lat", "lon", "comuna_id"];

/// Antenna lookup by id.
#[derive(Clone, Debug, Default)]
pub struct AntennaRegistry {
    antennas: HashMap<AntennaId, Antenna>,
    ids: Vec<AntennaId>,
}

impl AntennaRegistry {
    pub fn new(antennas: impl IntoIterator<Item = Antenna>) -> Result<Self> {
        let mut map = HashMap::new();
        for a in antennas {
            a.validate()?;
            let id = a.id;
            if map.insert(id, a).is_some() {
                return Err(Error::schema(format!("duplicate antenna_id {id}")));
            }
        }
        let mut ids: Vec<AntennaId> = map.keys().copied().collect();
        ids.sort_unstable();
        Ok(AntennaRegistry { antennas: map, ids })
    }

    pub fn get(&self, id: AntennaId) -> Option<&Antenna> {
        self.antennas.get(&id)
    }

    #[inline]
    pub fn contains(&self, id: AntennaId) -> bool {
        self.antennas.contains_key(&id)
    }

    #[inline]
    pub fn comuna_of(&self, id: AntennaId) -> Option<ComunaId> {
        self.antennas.get(&id).map(|a| a.comuna)
    }

    /// Antennas in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Antenna> {
        self.ids.iter().map(|id| &self.antennas[id])
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Every antenna must point at a comuna of `comunas`.
    pub fn validate_against(&self, comunas: &ComunaTable) -> Result<()> {
        for a in self.iter() {
            if !comunas.contains(a.comuna) {
                return Err(Error::validation(format!(
                    "antenna {} references unknown comuna {}",
                    a.id, a.comuna
                )));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct ComunaRow {
    comuna_id: u32,
    name: String,
    region_id: u32,
    in_scl: String,
    income_decile: f64,
    poverty_pct: f64,
    rurality_pct: f64,
    population: f64,
    area_km2: f64,
    icvu: Option<f64>,
    centroid_lat: f64,
    centroid_lon: f64,
}

#[derive(Serialize)]
struct ComunaOut<'a> {
    comuna_id: u32,
    name: &'a str,
    region_id: u32,
    in_scl: bool,
    income_decile: f64,
    poverty_pct: f64,
    rurality_pct: f64,
    population: f64,
    area_km2: f64,
    icvu: Option<f64>,
    centroid_lat: f64,
    centroid_lon: f64,
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.trim() {
        "true" | "1" | "TRUE" | "True" => Ok(true),
        "false" | "0" | "FALSE" | "False" => Ok(false),
        other => Err(Error::schema(format!("in_scl must be a boolean, found `{other}`"))),
    }
}

fn check_header<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str], what: &str) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::schema(format!(
            "{what} header must be `{}`, found `{}`",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

pub fn parse_comunas<R: Read>(source: R) -> Result<ComunaTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::Fields).from_reader(source);
    check_header(&mut reader, &COMUNA_HEADER, "comuna")?;
    let mut profiles = Vec::new();
    for row in reader.deserialize() {
        let row: ComunaRow = row?;
        profiles.push(ComunaProfile {
            id: ComunaId(row.comuna_id),
            name: row.name,
            region: RegionId(row.region_id),
            in_scl: parse_bool(&row.in_scl)?,
            income_decile: row.income_decile,
            poverty_pct: row.poverty_pct,
            rurality: row.rurality_pct,
            population: row.population,
            area_km2: row.area_km2,
            icvu: row.icvu,
            centroid_lat: row.centroid_lat,
            centroid_lon: row.centroid_lon,
        });
    }
    // duplicates before range checks, so a repeated id is reported as such
    let mut ids: Vec<ComunaId> = profiles.iter().map(|p| p.id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::schema(format!("duplicate comuna_id {}", w[0])));
    }
    ComunaTable::new(profiles)
}

pub fn load_comunas(path: &Path) -> Result<ComunaTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_comunas(file)
}

pub fn write_comunas<W: Write>(out: W, table: &ComunaTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in table.iter() {
        w.serialize(ComunaOut {
            comuna_id: p.id.0,
            name: &p.name,
            region_id: p.region.0,
            in_scl: p.in_scl,
            income_decile: p.income_decile,
            poverty_pct: p.poverty_pct,
            rurality_pct: p.rurality,
            population: p.population,
            area_km2: p.area_km2,
            icvu: p.icvu,
            centroid_lat: p.centroid_lat,
            centroid_lon: p.centroid_lon,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_antennas<R: Read>(source: R) -> Result<AntennaRegistry> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::Fields).from_reader(source);
    check_header(&mut reader, &ANTENNA_HEADER, "antenna")?;
    let rows: Vec<Antenna> = reader.deserialize().collect::<Result<_, csv::Error>>()?;
    AntennaRegistry::new(rows)
}

pub fn load_antennas(path: &Path) -> Result<AntennaRegistry> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_antennas(file)
}

pub fn write_antennas<W: Write>(out: W, registry: &AntennaRegistry) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for a in registry.iter() {
        w.serialize(a)?;
    }
    w.flush()?;
    Ok(())
}
