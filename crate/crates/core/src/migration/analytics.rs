use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Direction, Level, OdMatrix, PctMatrix};
use crate::error::{Error, Result};
use crate::geo::haversine_km;
use crate::model::{ComunaId, ComunaTable, RegionId, METROPOLITAN_REGION};
use crate::transport::wasserstein1;

/// A value per origin, plus the origins that had to be skipped.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OriginValues {
    pub values: BTreeMap<u32, f64>,
    pub skipped: Vec<u32>,
}

pub type Divergence = OriginValues;

fn profile(comunas: &ComunaTable, id: u32) -> Result<&crate::model::ComunaProfile> {
    comunas.require(ComunaId(id))
}

/// Exact 1-Wasserstein distance, per origin, between the destination
/// distributions of two matrices. Ground metric is the great-circle distance
/// between destination centroids. Origins missing or massless in either
/// matrix are skipped.
pub fn destination_divergence(
    year: &PctMatrix,
    base: &PctMatrix,
    centroid: impl Fn(u32) -> Option<(f64, f64)>,
) -> Result<Divergence> {
    let origins: BTreeSet<u32> = year.rows.iter().chain(&base.rows).copied().collect();
    let mut out = Divergence::default();
    for o in origins {
        let (Some(ry), Some(rb)) = (year.row(o), base.row(o)) else {
            out.skipped.push(o);
            continue;
        };
        if !(ry.iter().sum::<f64>() > 0.0 && rb.iter().sum::<f64>() > 0.0) {
            out.skipped.push(o);
            continue;
        }
        let support: Vec<u32> = year
            .cols
            .iter()
            .zip(ry)
            .chain(base.cols.iter().zip(rb))
            .filter(|(_, &v)| v > 0.0)
            .map(|(&c, _)| c)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let points: Vec<(f64, f64)> = support
            .iter()
            .map(|&d| centroid(d).ok_or_else(|| Error::validation(format!("no centroid for destination {d}"))))
            .collect::<Result<_>>()?;
        let p: Vec<f64> = support.iter().map(|&d| year.get(o, d)).collect();
        let q: Vec<f64> = support.iter().map(|&d| base.get(o, d)).collect();
        let w = wasserstein1(&p, &q, |i, j| {
            haversine_km(points[i].0, points[i].1, points[j].0, points[j].1)
        })?;
        out.values.insert(o, w);
    }
    Ok(out)
}

/// Mass-weighted mean of `attr(destination)` per origin. Origins with no
/// mass are skipped.
fn weighted_mean(od: &PctMatrix, attr: impl Fn(u32) -> Result<f64>) -> Result<OriginValues> {
    let mut out = OriginValues::default();
    let attrs: Vec<f64> = od.cols.iter().map(|&c| attr(c)).collect::<Result<_>>()?;
    for (i, &o) in od.rows.iter().enumerate() {
        let row = &od.values[i * od.cols.len()..(i + 1) * od.cols.len()];
        let mass: f64 = row.iter().sum();
        if !(mass > 0.0) {
            out.skipped.push(o);
            continue;
        }
        let s: f64 = row.iter().zip(&attrs).filter(|(&m, _)| m > 0.0).map(|(m, a)| m * a).sum();
        out.values.insert(o, s / mass);
    }
    Ok(out)
}

/// `R_x = Σ_y m(x,y)·r(y) / Σ_y m(x,y)` over comuna-level destinations.
pub fn weighted_destination_rurality(od: &PctMatrix, comunas: &ComunaTable) -> Result<OriginValues> {
    weighted_mean(od, |y| Ok(profile(comunas, y)?.rurality))
}

/// `ΔR_x = R^T_x − R^{T0}_x` for origins with emigrants in both years.
pub fn rurality_shift(od_t: &PctMatrix, od_t0: &PctMatrix, comunas: &ComunaTable) -> Result<OriginValues> {
    let rt = weighted_destination_rurality(od_t, comunas)?;
    let r0 = weighted_destination_rurality(od_t0, comunas)?;
    let origins: BTreeSet<u32> = od_t.rows.iter().chain(&od_t0.rows).copied().collect();
    let mut out = OriginValues::default();
    for o in origins {
        match (rt.values.get(&o), r0.values.get(&o)) {
            (Some(a), Some(b)) => {
                out.values.insert(o, a - b);
            }
            _ => out.skipped.push(o),
        }
    }
    Ok(out)
}

/// Emigrant-share-weighted mean population density of destinations.
pub fn density_weighted_destination(od: &PctMatrix, comunas: &ComunaTable) -> Result<OriginValues> {
    weighted_mean(od, |y| {
        let d = profile(comunas, y)?.density();
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::validation(format!("comuna {y} has a non-finite density")))
        }
    })
}

/// Weighted mean of `ICVU(y) − ICVU(x)` over destinations with an ICVU
/// score, weights renormalized over those destinations.
pub fn icvu_tradeoff(od: &PctMatrix, comunas: &ComunaTable) -> Result<OriginValues> {
    let mut out = OriginValues::default();
    let dest_icvu: Vec<Option<f64>> = od.cols.iter().map(|&c| Ok(profile(comunas, c)?.icvu)).collect::<Result<_>>()?;
    for (i, &o) in od.rows.iter().enumerate() {
        let Some(origin_icvu) = profile(comunas, o)?.icvu else {
            out.skipped.push(o);
            continue;
        };
        let row = &od.values[i * od.cols.len()..(i + 1) * od.cols.len()];
        let (mut mass, mut acc) = (0.0, 0.0);
        for (&m, icvu) in row.iter().zip(&dest_icvu) {
            if let (true, Some(v)) = (m > 0.0, icvu) {
                mass += m;
                acc += m * (v - origin_icvu);
            }
        }
        if mass > 0.0 {
            out.values.insert(o, acc / mass);
        } else {
            out.skipped.push(o);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionAggregate {
    pub region: RegionId,
    pub population: f64,
    /// Population-weighted mean of member comuna centroids.
    pub centroid_lat: f64,
    pub centroid_lon: f64,
}

fn weighted_centroid<'a>(members: impl Iterator<Item = &'a crate::model::ComunaProfile>) -> (f64, f64, f64) {
    let (mut pop, mut lat, mut lon) = (0.0, 0.0, 0.0);
    for p in members {
        pop += p.population;
        lat += p.population * p.centroid_lat;
        lon += p.population * p.centroid_lon;
    }
    (pop, lat / pop, lon / pop)
}

/// Population and centroid per region, ascending by region id.
pub fn region_aggregates(comunas: &ComunaTable) -> Vec<RegionAggregate> {
    let regions: BTreeSet<RegionId> = comunas.iter().map(|p| p.region).collect();
    regions
        .into_iter()
        .map(|region| {
            let (population, centroid_lat, centroid_lon) =
                weighted_centroid(comunas.iter().filter(|p| p.region == region));
            RegionAggregate { region, population, centroid_lat, centroid_lon }
        })
        .collect()
}

/// Population-weighted centroid of the capital's comunas.
pub fn scl_centroid(comunas: &ComunaTable) -> Result<(f64, f64)> {
    if comunas.scl().next().is_none() {
        return Err(Error::validation("comuna table has no capital comunas"));
    }
    let (_, lat, lon) = weighted_centroid(comunas.scl());
    Ok((lat, lon))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionFlow {
    pub region: RegionId,
    pub inflow_from_scl: u64,
    pub population: f64,
    pub distance_km: f64,
    /// Population over distance to the capital, persons/km.
    pub gravity_score: f64,
}

/// Regions outside the metropolitan region ranked by gravity score,
/// descending, ties by region id.
pub fn gravity_rank(
    regions: &[RegionAggregate],
    inflows: &BTreeMap<u32, u64>,
    scl: (f64, f64),
) -> Result<Vec<RegionFlow>> {
    let mut out = Vec::new();
    for r in regions.iter().filter(|r| r.region != METROPOLITAN_REGION) {
        let distance_km = haversine_km(r.centroid_lat, r.centroid_lon, scl.0, scl.1);
        if distance_km == 0.0 {
            return Err(Error::DegenerateGeometry(format!("region {} sits on the capital centroid", r.region)));
        }
        if !(r.population > 0.0) {
            return Err(Error::validation(format!("region {} has no population", r.region)));
        }
        out.push(RegionFlow {
            region: r.region,
            inflow_from_scl: inflows.get(&r.region.0).copied().unwrap_or(0),
            population: r.population,
            distance_km,
            gravity_score: r.population / distance_km,
        });
    }
    out.sort_by(|a, b| b.gravity_score.total_cmp(&a.gravity_score).then(a.region.cmp(&b.region)));
    Ok(out)
}

/// Aggregate persons-per-device factor of the capital: total population of
/// capital comunas with devices over their total device base.
pub fn scl_expansion_factor(emigration: &OdMatrix, comunas: &ComunaTable) -> Result<f64> {
    let (mut pop, mut base) = (0.0, 0u64);
    for p in comunas.scl() {
        let b = emigration.base(p.id.0);
        if b > 0 {
            pop += p.population;
            base += b;
        }
    }
    if base == 0 {
        return Err(Error::InsufficientData("no devices homed in the capital".into()));
    }
    Ok(pop / base as f64)
}

/// Percent of each destination region's population made up of migrants
/// from the capital, after expanding devices to persons.
pub fn hosting_impact(
    od_region: &OdMatrix,
    regions: &[RegionAggregate],
    expansion: f64,
) -> Result<BTreeMap<u32, f64>> {
    if od_region.direction != Direction::Emigration || od_region.level != Level::Region {
        return Err(Error::validation("hosting impact needs a region-level emigration matrix"));
    }
    let mut out = BTreeMap::new();
    for r in regions.iter().filter(|r| r.region != METROPOLITAN_REGION) {
        if !(r.population > 0.0) {
            return Err(Error::validation(format!("region {} has no population", r.region)));
        }
        let persons = od_region.column_total(r.region.0) as f64 * expansion;
        out.insert(r.region.0, 100.0 * persons / r.population);
    }
    Ok(out)
}
