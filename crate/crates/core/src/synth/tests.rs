use std::collections::BTreeMap;

use super::*;
use crate::home::HomeAccumulator;
use crate::ingest::{XdrFormat, XdrWriter};
use crate::model::XdrEvent;
use crate::migration::classify_all;
use crate::mobility::count_trips;

fn small(seed: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig::new(seed, 20, 300);
    c.events_per_night = 4.0;
    c
}

fn encode(world: &World) -> Vec<u8> {
    let mut w = XdrWriter::new(Vec::new(), XdrFormat::Binary, &world.window).unwrap();
    emit_events(world, &mut w).unwrap();
    w.finish().unwrap()
}

#[test]
fn same_seed_same_bytes() {
    let a = generate_world(&small(11)).unwrap();
    let b = generate_world(&small(11)).unwrap();
    assert_eq!(a.agents, b.agents);
    assert_eq!(encode(&a), encode(&b));
    let c = generate_world(&small(12)).unwrap();
    assert_ne!(encode(&a), encode(&c));
}

#[test]
fn thread_count_does_not_change_output() {
    let world = generate_world(&small(5)).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| encode(&world));
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| encode(&world));
    assert_eq!(one, four);
}

#[test]
fn zero_rate_means_no_migrants() {
    let mut c = ScenarioConfig::new(3, 30, 2000);
    c.migration_rate = 0.0;
    let w = generate_world(&c).unwrap();
    assert!(w.agents.iter().all(|a| !a.migrated));
}

#[test]
fn planted_migrant_count_is_binomial() {
    let mut c = ScenarioConfig::new(42, 40, 10_000);
    c.migration_rate = 0.12;
    let w = generate_world(&c).unwrap();
    let k = w.agents.iter().filter(|a| a.migrated).count() as f64;
    let half_width = 2.5758 * (10_000.0f64 * 0.12 * 0.88).sqrt();
    assert!((k - 1200.0).abs() <= half_width, "{k} migrants");
}

#[test]
fn migrants_leave_their_region_and_stayers_do_not() {
    let mut c = ScenarioConfig::new(8, 40, 3000);
    c.migration_rate = 0.3;
    c.intra_region_move_rate = 0.2;
    let w = generate_world(&c).unwrap();
    let region = |id| w.comunas.get(id).unwrap().region;
    let mut intra = 0;
    for a in &w.agents {
        assert_eq!(a.migrated, region(a.origin) != region(a.destination));
        if let Some(m) = a.move_week {
            assert!(m > w.window.baseline_week() && m <= w.window.november_weeks()[0]);
            if !a.migrated {
                intra += 1;
                assert_ne!(a.origin, a.destination);
            }
        } else {
            assert_eq!(a.origin, a.destination);
        }
        assert_eq!(w.antennas.comuna_of(a.origin_antenna), Some(a.origin));
        assert_eq!(w.antennas.comuna_of(a.destination_antenna), Some(a.destination));
    }
    assert!(intra > 0);
}

#[test]
fn world_tables_are_consistent() {
    let w = generate_world(&ScenarioConfig::new(1, 50, 10)).unwrap();
    assert_eq!(w.comunas.len(), 50);
    assert_eq!(w.antennas.len(), 150);
    w.antennas.validate_against(&w.comunas).unwrap();
    let scl: Vec<_> = w.comunas.scl().collect();
    assert_eq!(scl.len(), 15);
    assert!(scl.iter().all(|p| is_metropolitan(p.region)));
    assert!(w.comunas.iter().any(|p| is_metropolitan(p.region) && !p.in_scl));
    assert!(w.comunas.iter().all(|p| (1.0..=10.0).contains(&p.income_decile)));
    assert!(w.comunas.iter().all(|p| (0.0..=1.0).contains(&p.rurality)));
    assert!(scl.iter().all(|p| p.icvu.is_some()));
    for q in w.quarantines.intervals() {
        assert!(q.start > w.window.date_of_day_index(w.window.baseline_day_indices().end));
        assert!(q.end <= w.window.end_date() && q.start <= q.end);
    }
}

#[test]
fn noiseless_events_recover_true_homes() {
    let world = generate_world(&small(21)).unwrap();
    let mut acc = HomeAccumulator::new(world.window.clone());
    let mut per_device: BTreeMap<u64, Vec<XdrEvent>> = BTreeMap::new();
    for a in &world.agents {
        let evs = emit_agent_events(&world, a);
        assert!(evs.windows(2).all(|p| p[0].timestamp <= p[1].timestamp));
        assert!(evs.iter().all(|e| world.window.contains(e.timestamp)));
        for e in &evs {
            acc.observe(e);
        }
        per_device.insert(a.id, evs);
    }
    let homes = acc.finish(&world.antennas, crate::home::DEFAULT_MIN_NIGHT_EVENTS);
    assert_eq!(homes.len(), world.agents.len());
    for (h, a) in homes.iter().zip(&world.agents) {
        assert_eq!(h.device.0, a.id);
        for (w, got) in h.weekly_home.iter().enumerate() {
            if let Some(c) = got {
                assert_eq!(*c, a.home_in_week(w), "agent {} week {w}", a.id);
            }
        }
        assert_eq!(h.baseline_home, Some(a.origin));
        assert_eq!(h.november_home, Some(a.destination));
    }
    let (records, _) = classify_all(&homes, &world.comunas).unwrap();
    assert_eq!(classification_accuracy(&world, &records), 1.0);

    // each excursion is exactly two trips
    for (id, evs) in &per_device {
        let mut by_day: BTreeMap<usize, Vec<AntennaId>> = BTreeMap::new();
        for e in evs {
            by_day.entry(world.window.day_index(e.timestamp).unwrap()).or_default().push(e.antenna);
        }
        for ants in by_day.values() {
            let t = count_trips(ants, &world.antennas);
            assert_eq!((t.internal + t.external) % 2, 0, "device {id}");
        }
    }
}

#[test]
fn sparse_nights_leave_weeks_unresolved() {
    let mut c = small(2);
    c.events_per_night = 0.0;
    let world = generate_world(&c).unwrap();
    let mut acc = HomeAccumulator::new(world.window.clone());
    for a in &world.agents {
        for e in emit_agent_events(&world, a) {
            acc.observe(&e);
        }
    }
    let homes = acc.finish(&world.antennas, 3);
    assert!(homes.iter().all(|h| h.weekly_home.iter().all(Option::is_none)));
}

#[test]
fn noise_relocates_events() {
    let mut c = small(4);
    c.noise = 0.5;
    c.excursions_per_day = 0.0;
    let world = generate_world(&c).unwrap();
    let a = &world.agents[0];
    let evs = emit_agent_events(&world, a);
    let away = evs
        .iter()
        .filter(|e| e.antenna != a.origin_antenna && e.antenna != a.destination_antenna)
        .count() as f64;
    let share = away / evs.len() as f64;
    assert!((share - 0.5).abs() < 0.08, "{share}");
}

#[test]
fn config_validation_and_json() {
    let mut c = ScenarioConfig::new(1, 10, 10);
    c.noise = 1.5;
    assert!(c.validate().is_err());
    let c = ScenarioConfig::new(1, 10, 10);
    let s = serde_json::to_string(&c).unwrap();
    let back: ScenarioConfig = serde_json::from_str(&s).unwrap();
    assert_eq!(back, c);
    let minimal = r#"{"seed":7,"n_comunas":12,"n_agents":5,"migration_rate":0.1,
        "income_migration_coupling":0,"quarantine_drop":0.3,"noise":0,"events_per_night":3}"#;
    let m: ScenarioConfig = serde_json::from_str(minimal).unwrap();
    assert_eq!(m.antennas_per_comuna, 3);
    assert_eq!(m.year, 2020);
    assert!(serde_json::from_str::<ScenarioConfig>(r#"{"seed":1}"#).is_err());
}

#[test]
fn ground_truth_csv_layout() {
    let world = generate_world(&ScenarioConfig::new(9, 10, 4)).unwrap();
    let mut buf = Vec::new();
    world.write_ground_truth(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("agent_id,origin_comuna,destination_comuna,migrated"));
    assert_eq!(lines.count(), 4);
    let mut buf = Vec::new();
    world.write_true_homes(&mut buf).unwrap();
    let homes = crate::home::read_homes_csv(&buf[..], &world.window).unwrap();
    for (h, a) in homes.iter().zip(&world.agents) {
        assert_eq!(h.november_home, Some(a.destination));
    }
}
