//! Domain vocabulary shared by every stage of the pipeline.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident($inner:ty)) => {
        $(#[$meta])*
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }

        impl From<$inner> for $name {
            fn from(v: $inner) -> Self {
                $name(v)
            }
        }
    };
}

id_type!(
    /// Opaque anonymized device identifier.
    DeviceId(u64)
);
id_type!(
    /// Opaque antenna (cell tower) identifier.
    AntennaId(u32)
);
id_type!(
    /// Administrative unit code.
    ComunaId(u32)
);
id_type!(RegionId(u32));

/// The region that contains the capital's 32 comunas.
pub const METROPOLITAN_REGION: RegionId = RegionId(13);

/// One device-to-antenna interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct XdrEvent {
    pub device: DeviceId,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub antenna: AntennaId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Antenna {
    #[serde(rename = "antenna_id")]
    pub id: AntennaId,
    pub lat: f64,
    pub lon: f64,
    #[serde(rename = "comuna_id")]
    pub comuna: ComunaId,
}

impl Antenna {
    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::validation(format!(
                "antenna {} has coordinates out of range ({}, {})",
                self.id, self.lat, self.lon
            )));
        }
        Ok(())
    }
}

/// Socioeconomic and geographic attributes of one comuna.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComunaProfile {
    #[serde(rename = "comuna_id")]
    pub id: ComunaId,
    pub name: String,
    #[serde(rename = "region_id")]
    pub region: RegionId,
    pub in_scl: bool,
    /// Average household income decile, 1 (poorest) to 10 (richest).
    pub income_decile: f64,
    pub poverty_pct: f64,
    /// Fraction of households classified as rural, in [0, 1].
    #[serde(rename = "rurality_pct")]
    pub rurality: f64,
    pub population: f64,
    pub area_km2: f64,
    pub icvu: Option<f64>,
    pub centroid_lat: f64,
    pub centroid_lon: f64,
}

impl ComunaProfile {
    pub fn density(&self) -> f64 {
        self.population / self.area_km2
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::validation(format!("comuna {}: {what}", self.id)));
        if !(1.0..=10.0).contains(&self.income_decile) {
            return fail(&format!("income_decile {} outside [1, 10]", self.income_decile));
        }
        if !(0.0..=100.0).contains(&self.poverty_pct) {
            return fail(&format!("poverty_pct {} outside [0, 100]", self.poverty_pct));
        }
        if !(0.0..=1.0).contains(&self.rurality) {
            return fail(&format!("rurality_pct {} outside [0, 1]", self.rurality));
        }
        if !(self.population > 0.0) || !self.population.is_finite() {
            return fail("population must be positive");
        }
        if !(self.area_km2 > 0.0) || !self.area_km2.is_finite() {
            return fail("area_km2 must be positive");
        }
        if !self.density().is_finite() {
            return fail("density is not finite");
        }
        if self.icvu.is_some_and(|v| !v.is_finite()) {
            return fail("icvu is not finite");
        }
        if !(-90.0..=90.0).contains(&self.centroid_lat)
            || !(-180.0..=180.0).contains(&self.centroid_lon)
        {
            return fail("centroid out of range");
        }
        if self.in_scl && self.region != METROPOLITAN_REGION {
            return fail(&format!(
                "flagged in_scl but region is {} (expected {})",
                self.region, METROPOLITAN_REGION
            ));
        }
        Ok(())
    }
}

/// Comuna profiles ordered by id, with keyed lookup.
#[derive(Clone, Debug, Default)]
pub struct ComunaTable {
    profiles: Vec<ComunaProfile>,
    index: HashMap<ComunaId, usize>,
}

impl ComunaTable {
    /// Builds a table, rejecting duplicate ids and invalid profiles.
    pub fn new(mut profiles: Vec<ComunaProfile>) -> Result<Self> {
        for p in &profiles {
            p.validate()?;
        }
        profiles.sort_by_key(|p| p.id);
        let mut index = HashMap::with_capacity(profiles.len());
        for (i, p) in profiles.iter().enumerate() {
            if index.insert(p.id, i).is_some() {
                return Err(Error::schema(format!("duplicate comuna_id {}", p.id)));
            }
        }
        Ok(ComunaTable { profiles, index })
    }

    pub fn get(&self, id: ComunaId) -> Option<&ComunaProfile> {
        self.index.get(&id).map(|&i| &self.profiles[i])
    }

    pub fn require(&self, id: ComunaId) -> Result<&ComunaProfile> {
        self.get(id)
            .ok_or_else(|| Error::validation(format!("unknown comuna_id {id}")))
    }

    pub fn contains(&self, id: ComunaId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ComunaProfile> {
        self.profiles.iter()
    }

    pub fn scl(&self) -> impl Iterator<Item = &ComunaProfile> {
        self.profiles.iter().filter(|p| p.in_scl)
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn profiles(&self) -> &[ComunaProfile] {
        &self.profiles
    }

    pub fn is_scl(&self, id: ComunaId) -> bool {
        self.get(id).is_some_and(|p| p.in_scl)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn profile(id: u32, region: u32, in_scl: bool) -> ComunaProfile {
        ComunaProfile {
            id: ComunaId(id),
            name: format!("C{id}"),
            region: RegionId(region),
            in_scl,
            income_decile: 5.0,
            poverty_pct: 10.0,
            rurality: 0.1,
            population: 1000.0,
            area_km2: 10.0,
            icvu: None,
            centroid_lat: -33.0,
            centroid_lon: -70.0,
        }
    }

    #[test]
    fn duplicate_ids_are_a_schema_error() {
        let err = ComunaTable::new(vec![profile(1, 13, true), profile(1, 13, true)]).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn scl_comunas_must_be_metropolitan() {
        let err = ComunaTable::new(vec![profile(1, 5, true)]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn decile_range_is_checked() {
        let mut p = profile(1, 13, true);
        p.income_decile = 11.0;
        assert!(matches!(p.validate(), Err(Error::Validation(_))));
        p.income_decile = 10.0;
        p.population = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn density_is_population_over_area() {
        assert_eq!(profile(1, 13, true).density(), 100.0);
    }
}
