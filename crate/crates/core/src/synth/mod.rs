//! Synthetic worlds with known homes, migrations and mobility drops.
//!
//! Geography is a north–south strip of sixteen regions with the capital's
//! comunas in region 13. Agents sleep at a home antenna every night, make
//! daytime excursions (home, destination, home) at a per-day Poisson rate
//! that quarantine scales down, and may move once, on a Monday, between the
//! baseline week and the first November week. Every random draw comes from
//! a per-purpose, per-entity SplitMix64 stream, so outputs depend only on
//! the configuration.

mod emit;
pub mod rng;

use std::collections::BTreeMap;
use std::io::Write;

use chrono::Days;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::haversine_km;
use crate::ingest::{AntennaRegistry, QuarantineInterval, QuarantineSchedule};
use crate::model::{Antenna, AntennaId, ComunaId, ComunaProfile, ComunaTable, RegionId, METROPOLITAN_REGION};
use crate::window::StudyWindow;
use rng::{cumulative, SplitMix64};

pub use emit::{emit_agent_events, emit_events, write_intensity_csv, INTENSITY_CSV_HEADER};

const TAG_WORLD: u64 = 0x574F_524C_44;
const TAG_AGENT: u64 = 0x4147_454E_54;
const TAG_EVENTS: u64 = 0x4556_454E_54;

/// Regions from north to south with a representative centre.
const REGIONS: [(u32, f64, f64); 16] = [
    (15, -18.5, -70.3),
    (1, -20.2, -70.1),
    (2, -23.6, -70.4),
    (3, -27.4, -70.3),
    (4, -30.0, -71.2),
    (5, -33.0, -71.6),
    (13, -33.45, -70.65),
    (6, -34.4, -70.7),
    (7, -35.4, -71.6),
    (16, -36.6, -72.1),
    (8, -37.0, -73.0),
    (9, -38.7, -72.6),
    (14, -39.8, -73.2),
    (10, -41.5, -72.9),
    (11, -45.6, -72.0),
    (12, -53.1, -70.9),
];

fn default_year() -> i32 {
    2020
}
fn default_tz() -> i32 {
    crate::window::DEFAULT_TZ_OFFSET_HOURS
}
fn default_antennas() -> u32 {
    3
}
fn default_excursions() -> f64 {
    1.5
}
fn default_internal_share() -> f64 {
    0.6
}
fn default_intra_move() -> f64 {
    0.02
}
fn default_scl_share() -> f64 {
    0.7
}
fn default_quarantine_share() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_comunas: usize,
    pub n_agents: usize,
    pub migration_rate: f64,
    /// Slope linking the origin income decile to emigration propensity:
    /// `rate · (1 + coupling · (decile − 5.5) / 4.5)`.
    pub income_migration_coupling: f64,
    pub quarantine_drop: f64,
    /// Probability that an event lands on a random antenna other than home.
    pub noise: f64,
    pub events_per_night: f64,
    #[serde(default = "default_year")]
    pub year: i32,
    #[serde(default = "default_tz")]
    pub tz_offset_hours: i32,
    #[serde(default = "default_antennas")]
    pub antennas_per_comuna: u32,
    /// Mean daytime excursions per agent-day; each one makes two trips.
    #[serde(default = "default_excursions")]
    pub excursions_per_day: f64,
    #[serde(default = "default_internal_share")]
    pub internal_trip_share: f64,
    /// Chance that a non-migrant moves to another comuna of its own region.
    #[serde(default = "default_intra_move")]
    pub intra_region_move_rate: f64,
    #[serde(default = "default_scl_share")]
    pub scl_agent_share: f64,
    /// Share of comunas that get one quarantine period.
    #[serde(default = "default_quarantine_share")]
    pub quarantine_comuna_share: f64,
}

impl ScenarioConfig {
    /// Desk-scale defaults around the given size.
    pub fn new(seed: u64, n_comunas: usize, n_agents: usize) -> Self {
        ScenarioConfig {
            seed,
            n_comunas,
            n_agents,
            migration_rate: 0.12,
            income_migration_coupling: 0.0,
            quarantine_drop: 0.3,
            noise: 0.0,
            events_per_night: 4.0,
            year: default_year(),
            tz_offset_hours: default_tz(),
            antennas_per_comuna: default_antennas(),
            excursions_per_day: default_excursions(),
            internal_trip_share: default_internal_share(),
            intra_region_move_rate: default_intra_move(),
            scl_agent_share: default_scl_share(),
            quarantine_comuna_share: default_quarantine_share(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("migration_rate", self.migration_rate),
            ("quarantine_drop", self.quarantine_drop),
            ("noise", self.noise),
            ("internal_trip_share", self.internal_trip_share),
            ("intra_region_move_rate", self.intra_region_move_rate),
            ("scl_agent_share", self.scl_agent_share),
            ("quarantine_comuna_share", self.quarantine_comuna_share),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.n_agents < 1 {
            return Err(Error::validation("n_agents must be at least 1"));
        }
        if self.n_comunas < 3 {
            return Err(Error::validation("n_comunas must be at least 3"));
        }
        if self.antennas_per_comuna < 2 {
            return Err(Error::validation("antennas_per_comuna must be at least 2"));
        }
        for (name, v) in [
            ("events_per_night", self.events_per_night),
            ("excursions_per_day", self.excursions_per_day),
            ("income_migration_coupling", self.income_migration_coupling),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(format!("{name} must be finite and nonnegative")));
            }
        }
        if self.excursions_per_day > 50.0 || self.events_per_night > 200.0 {
            return Err(Error::validation("event rates are beyond desk scale"));
        }
        Ok(())
    }

    pub fn window(&self) -> Result<StudyWindow> {
        StudyWindow::new(self.year, self.tz_offset_hours)
    }
}

/// One synthetic resident.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u64,
    pub origin: ComunaId,
    pub destination: ComunaId,
    pub origin_antenna: AntennaId,
    pub destination_antenna: AntennaId,
    /// Week from which the agent lives at the destination.
    pub move_week: Option<usize>,
    pub migrated: bool,
}

impl Agent {
    pub fn home_in_week(&self, week: usize) -> ComunaId {
        match self.move_week {
            Some(m) if week >= m => self.destination,
            _ => self.origin,
        }
    }
}

pub struct World {
    pub config: ScenarioConfig,
    pub window: StudyWindow,
    pub comunas: ComunaTable,
    pub antennas: AntennaRegistry,
    pub quarantines: QuarantineSchedule,
    pub agents: Vec<Agent>,
    /// Antenna ids per comuna, ascending.
    comuna_antennas: BTreeMap<ComunaId, Vec<AntennaId>>,
    all_antennas: Vec<AntennaId>,
}

impl World {
    pub fn antennas_of(&self, comuna: ComunaId) -> &[AntennaId] {
        &self.comuna_antennas[&comuna]
    }

    /// Planned trips per resident of `comuna` on day `day` of the window.
    pub fn planned_trips(&self, comuna: ComunaId, day: usize) -> f64 {
        2.0 * self.excursion_rate(comuna, day)
    }

    fn excursion_rate(&self, comuna: ComunaId, day: usize) -> f64 {
        let q = self.quarantines.in_quarantine(comuna, self.window.date_of_day_index(day));
        self.config.excursions_per_day * if q { 1.0 - self.config.quarantine_drop } else { 1.0 }
    }

    /// Writes `agent_id,origin_comuna,destination_comuna,migrated`.
    pub fn write_ground_truth<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "agent_id,origin_comuna,destination_comuna,migrated")?;
        for a in &self.agents {
            writeln!(out, "{},{},{},{}", a.id, a.origin, a.destination, a.migrated)?;
        }
        out.flush()?;
        Ok(())
    }

    /// True weekly homes in the `device_id,week_start,comuna_id` layout.
    pub fn write_true_homes<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", crate::home::HOMES_CSV_HEADER)?;
        for a in &self.agents {
            for w in 0..self.window.n_weeks() {
                writeln!(out, "{},{},{}", a.id, self.window.week_start(w), a.home_in_week(w))?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

struct Layout {
    id: ComunaId,
    region: u32,
    in_scl: bool,
    lat: f64,
    lon: f64,
}

fn layout(config: &ScenarioConfig) -> Vec<Layout> {
    let n = config.n_comunas;
    let n_scl = ((0.3 * n as f64).round() as usize).clamp(1, 32);
    let rest = n - n_scl;
    let extra_metro = if rest >= 4 { ((0.05 * n as f64).round() as usize).max(1) } else { 0 };
    let mut rng = SplitMix64::stream(config.seed, TAG_WORLD, 0);
    let centre = |r: u32| REGIONS.iter().find(|x| x.0 == r).map(|x| (x.1, x.2)).expect("known region");
    let mut next_code: BTreeMap<u32, u32> = BTreeMap::new();
    let mut code = |r: u32| {
        let k = next_code.entry(r).or_insert(101);
        *k += 1;
        ComunaId(r * 1000 + *k - 1)
    };
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (region, in_scl) = if k < n_scl {
            (13, true)
        } else if k < n_scl + extra_metro {
            (13, false)
        } else {
            let others: Vec<u32> = REGIONS.iter().map(|r| r.0).filter(|&r| r != 13).collect();
            (others[(k - n_scl - extra_metro) % others.len()], false)
        };
        let (clat, clon) = centre(region);
        let spread = if in_scl { 0.15 } else { 0.6 };
        out.push(Layout {
            id: code(region),
            region,
            in_scl,
            lat: clat + rng.uniform(-spread, spread),
            lon: clon + rng.uniform(-spread, spread),
        });
    }
    out
}

fn build_comunas(config: &ScenarioConfig) -> Result<ComunaTable> {
    let lay = layout(config);
    let mut rng = SplitMix64::stream(config.seed, TAG_WORLD, 1);
    let n_scl = lay.iter().filter(|l| l.in_scl).count();
    // capital deciles spread evenly over [1, 10], in shuffled order
    let mut scl_deciles: Vec<f64> =
        (0..n_scl).map(|k| 1.0 + 9.0 * (k as f64 + 0.5) / n_scl as f64).collect();
    rng.shuffle(&mut scl_deciles);
    let mut scl_iter = scl_deciles.into_iter();
    let mut profiles = Vec::with_capacity(lay.len());
    for l in lay {
        let decile = if l.in_scl { scl_iter.next().expect("one per capital comuna") } else { rng.uniform(1.0, 8.0) };
        let poverty = (32.0 - 3.0 * decile + rng.uniform(-2.0, 2.0)).clamp(0.0, 100.0);
        let (rurality, population, area) = if l.in_scl {
            (rng.uniform(0.0, 0.05), rng.uniform(50_000.0, 500_000.0), rng.uniform(5.0, 100.0))
        } else {
            (rng.uniform(0.0, 0.8), rng.uniform(5_000.0, 300_000.0), rng.uniform(50.0, 3000.0))
        };
        let icvu = if l.in_scl || rng.bernoulli(0.4) {
            Some(30.0 + 5.0 * decile + rng.uniform(-3.0, 3.0))
        } else {
            None
        };
        profiles.push(ComunaProfile {
            id: l.id,
            name: format!("Comuna {}", l.id),
            region: RegionId(l.region),
            in_scl: l.in_scl,
            income_decile: decile,
            poverty_pct: poverty,
            rurality,
            population: population.round(),
            area_km2: area,
            icvu,
            centroid_lat: l.lat,
            centroid_lon: l.lon,
        });
    }
    ComunaTable::new(profiles)
}

fn build_antennas(config: &ScenarioConfig, comunas: &ComunaTable) -> Result<AntennaRegistry> {
    let mut rng = SplitMix64::stream(config.seed, TAG_WORLD, 2);
    let mut next = 1u32;
    let mut list = Vec::new();
    for p in comunas.iter() {
        for _ in 0..config.antennas_per_comuna {
            list.push(Antenna {
                id: AntennaId(next),
                lat: p.centroid_lat + rng.uniform(-0.02, 0.02),
                lon: p.centroid_lon + rng.uniform(-0.02, 0.02),
                comuna: p.id,
            });
            next += 1;
        }
    }
    AntennaRegistry::new(list)
}

fn build_quarantines(config: &ScenarioConfig, window: &StudyWindow, comunas: &ComunaTable) -> Result<QuarantineSchedule> {
    let mut rng = SplitMix64::stream(config.seed, TAG_WORLD, 3);
    let after_baseline = window.baseline_day_indices().end + 7;
    let latest_start = window.n_days().saturating_sub(60).max(after_baseline + 1);
    let mut intervals = Vec::new();
    for p in comunas.iter() {
        if !rng.bernoulli(config.quarantine_comuna_share) {
            continue;
        }
        let start = after_baseline + rng.below((latest_start - after_baseline) as u64) as usize;
        let len = 30 + rng.below(61) as usize;
        let end = (start + len).min(window.n_days() - 1);
        intervals.push(QuarantineInterval {
            comuna: p.id,
            start: window.start_date() + Days::new(start as u64),
            end: window.start_date() + Days::new(end as u64),
        });
    }
    QuarantineSchedule::new(intervals)
}

/// Builds the comuna table, antennas, quarantine schedule and agents.
pub fn generate_world(config: &ScenarioConfig) -> Result<World> {
    config.validate()?;
    let window = config.window()?;
    let comunas = build_comunas(config)?;
    let antennas = build_antennas(config, &comunas)?;
    let quarantines = build_quarantines(config, &window, &comunas)?;

    let mut comuna_antennas: BTreeMap<ComunaId, Vec<AntennaId>> = BTreeMap::new();
    for a in antennas.iter() {
        comuna_antennas.entry(a.comuna).or_default().push(a.id);
    }
    let mut all_antennas: Vec<AntennaId> = antennas.iter().map(|a| a.id).collect();
    all_antennas.sort_unstable();

    let profiles = comunas.profiles();
    let scl_idx: Vec<usize> = (0..profiles.len()).filter(|&i| profiles[i].in_scl).collect();
    let other_idx: Vec<usize> = (0..profiles.len()).filter(|&i| !profiles[i].in_scl).collect();
    let scl_cum = cumulative(scl_idx.iter().map(|&i| profiles[i].population));
    let other_cum = cumulative(other_idx.iter().map(|&i| profiles[i].population));

    // gravity kernel towards other regions, and population weights within one's own region
    let mut away: Vec<Option<Vec<f64>>> = Vec::with_capacity(profiles.len());
    let mut near: Vec<Option<Vec<f64>>> = Vec::with_capacity(profiles.len());
    for x in profiles {
        let w_away = profiles.iter().map(|y| {
            if y.region == x.region {
                0.0
            } else {
                let d = haversine_km(x.centroid_lat, x.centroid_lon, y.centroid_lat, y.centroid_lon).max(1.0);
                y.population / d
            }
        });
        let c = cumulative(w_away);
        away.push((*c.last().unwrap_or(&0.0) > 0.0).then_some(c));
        let w_near = profiles.iter().map(|y| if y.region == x.region && y.id != x.id { y.population } else { 0.0 });
        let c = cumulative(w_near);
        near.push((*c.last().unwrap_or(&0.0) > 0.0).then_some(c));
    }

    let first_move = window.baseline_week() + 1;
    let last_move = window.november_weeks()[0];
    let agents: Vec<Agent> = (1..=config.n_agents as u64)
        .map(|id| {
            let mut rng = SplitMix64::stream(config.seed, TAG_AGENT, id);
            let oi = if other_idx.is_empty() || (!scl_idx.is_empty() && rng.bernoulli(config.scl_agent_share)) {
                scl_idx[rng.pick_cumulative(&scl_cum)]
            } else {
                other_idx[rng.pick_cumulative(&other_cum)]
            };
            let origin = &profiles[oi];
            let p = (config.migration_rate
                * (1.0 + config.income_migration_coupling * (origin.income_decile - 5.5) / 4.5))
                .clamp(0.0, 1.0);
            let migrate = rng.bernoulli(p);
            let intra = rng.bernoulli(config.intra_region_move_rate);
            let target = match (migrate, intra) {
                (true, _) => away[oi].as_ref().map(|c| rng.pick_cumulative(c)),
                (false, true) => near[oi].as_ref().map(|c| rng.pick_cumulative(c)),
                _ => None,
            };
            let week = first_move + rng.below((last_move - first_move + 1) as u64) as usize;
            let pick_antenna = |rng: &mut SplitMix64, c: ComunaId| {
                let list = &comuna_antennas[&c];
                list[rng.below(list.len() as u64) as usize]
            };
            let origin_antenna = pick_antenna(&mut rng, origin.id);
            match target {
                Some(di) => {
                    let dest = &profiles[di];
                    Agent {
                        id,
                        origin: origin.id,
                        destination: dest.id,
                        origin_antenna,
                        destination_antenna: pick_antenna(&mut rng, dest.id),
                        move_week: Some(week),
                        migrated: dest.region != origin.region,
                    }
                }
                None => Agent {
                    id,
                    origin: origin.id,
                    destination: origin.id,
                    origin_antenna,
                    destination_antenna: origin_antenna,
                    move_week: None,
                    migrated: false,
                },
            }
        })
        .collect();

    Ok(World {
        config: config.clone(),
        window,
        comunas,
        antennas,
        quarantines,
        agents,
        comuna_antennas,
        all_antennas,
    })
}

/// Share of agents whose inferred record matches their true origin,
/// destination and migration flag. Agents without a record count as misses.
pub fn classification_accuracy(world: &World, records: &[crate::migration::MigrationRecord]) -> f64 {
    let by_device: std::collections::HashMap<u64, &crate::migration::MigrationRecord> =
        records.iter().map(|r| (r.device.0, r)).collect();
    let hits = world
        .agents
        .iter()
        .filter(|a| {
            by_device.get(&a.id).is_some_and(|r| {
                r.origin_comuna == a.origin && r.destination_comuna == a.destination && r.migrated == a.migrated
            })
        })
        .count();
    hits as f64 / world.agents.len() as f64
}

/// Whether `region` is the capital's region; exposed for scenario checks.
pub fn is_metropolitan(region: RegionId) -> bool {
    region == METROPOLITAN_REGION
}

#[cfg(test)]
mod tests;
