use std::io::Write;

use rayon::prelude::*;

use super::rng::SplitMix64;
use super::{Agent, World, TAG_EVENTS};
use crate::error::Result;
use crate::ingest::XdrWriter;
use crate::model::{AntennaId, ComunaId, DeviceId, XdrEvent};
use crate::window::SECONDS_PER_DAY;

pub const INTENSITY_CSV_HEADER: &str = "comuna,date,planned_trips";

const HOUR: i64 = 3600;
const DAY_START: i64 = 8 * HOUR;
const DAY_SPAN: i64 = 12 * HOUR;
const NIGHT_OFFSET: i64 = 22 * HOUR;
const NIGHT_SPAN: i64 = 9 * HOUR;
const BATCH: usize = 2048;

/// Events of one agent in time order.
///
/// Every night from the eve of the window onwards produces a Poisson number
/// of events at the home antenna in force at the event's instant. Every day
/// produces a Poisson number of home → destination → home excursions inside
/// 08:00–20:00 local time. Noise then relocates each event with probability
/// `noise` to a uniformly chosen antenna other than the current home one.
pub fn emit_agent_events(world: &World, agent: &Agent) -> Vec<XdrEvent> {
    let cfg = &world.config;
    let w = &world.window;
    let mut rng = SplitMix64::stream(cfg.seed, TAG_EVENTS, agent.id);
    let start = w.start_utc();
    let end = w.end_utc();
    let n_days = w.n_days() as i64;
    let home_at = |day: i64| -> (ComunaId, AntennaId) {
        let week = w.week_of_day_index(day.max(0) as usize);
        match agent.move_week {
            Some(m) if week >= m => (agent.destination, agent.destination_antenna),
            _ => (agent.origin, agent.origin_antenna),
        }
    };
    let day_of = |ts: i64| (ts - start).div_euclid(SECONDS_PER_DAY);

    let mut events: Vec<(i64, AntennaId)> = Vec::with_capacity(n_days as usize * 8);
    let comunas = world.comunas.profiles();
    for day in -1..n_days {
        let midnight = start + day * SECONDS_PER_DAY;
        let k = rng.poisson(cfg.events_per_night);
        for _ in 0..k {
            let ts = midnight + NIGHT_OFFSET + rng.below(NIGHT_SPAN as u64) as i64;
            if ts >= start && ts < end {
                events.push((ts, home_at(day_of(ts)).1));
            }
        }
        if day < 0 {
            continue;
        }
        let (home, home_antenna) = home_at(day);
        let trips = rng.poisson(world.excursion_rate(home, day as usize));
        if trips == 0 {
            continue;
        }
        let slot = DAY_SPAN / i64::from(trips);
        for s in 0..i64::from(trips) {
            let dest = if rng.bernoulli(cfg.internal_trip_share) {
                let list = world.antennas_of(home);
                // any antenna of the home comuna other than the home antenna
                let pos = list.iter().position(|&a| a == home_antenna).expect("home antenna in its comuna");
                let j = rng.below(list.len() as u64 - 1) as usize;
                list[if j >= pos { j + 1 } else { j }]
            } else {
                let own = comunas.iter().position(|p| p.id == home).expect("home comuna listed");
                let j = rng.below(comunas.len() as u64 - 1) as usize;
                let other = comunas[if j >= own { j + 1 } else { j }].id;
                let list = world.antennas_of(other);
                list[rng.below(list.len() as u64) as usize]
            };
            let base = midnight + DAY_START + s * slot;
            events.push((base + slot / 10, home_antenna));
            events.push((base + slot / 2, dest));
            events.push((base + slot * 9 / 10, home_antenna));
        }
    }
    events.sort_by_key(|e| e.0);

    if cfg.noise > 0.0 {
        let all = &world.all_antennas;
        for e in &mut events {
            if rng.bernoulli(cfg.noise) {
                let home = home_at(day_of(e.0)).1;
                let pos = all.binary_search(&home).expect("home antenna registered");
                let j = rng.below(all.len() as u64 - 1) as usize;
                e.1 = all[if j >= pos { j + 1 } else { j }];
            }
        }
    }

    events
        .into_iter()
        .map(|(timestamp, antenna)| XdrEvent { device: DeviceId(agent.id), timestamp, antenna })
        .collect()
}

/// Streams every agent's events, ordered by agent id then time. Batches of
/// agents are generated in parallel; the output does not depend on the
/// thread count. Returns the number of events written.
pub fn emit_events<W: Write>(world: &World, writer: &mut XdrWriter<W>) -> Result<u64> {
    let mut written = 0u64;
    for chunk in world.agents.chunks(BATCH) {
        let batch: Vec<Vec<XdrEvent>> = chunk.par_iter().map(|a| emit_agent_events(world, a)).collect();
        for ev in batch.iter().flatten() {
            writer.write(ev)?;
            written += 1;
        }
    }
    Ok(written)
}

/// Expected trips per resident for every comuna-day.
pub fn write_intensity_csv<W: Write>(world: &World, mut out: W) -> Result<()> {
    writeln!(out, "{INTENSITY_CSV_HEADER}")?;
    for p in world.comunas.iter() {
        for day in 0..world.window.n_days() {
            writeln!(out, "{},{},{}", p.id, world.window.date_of_day_index(day), world.planned_trips(p.id, day))?;
        }
    }
    out.flush()?;
    Ok(())
}
