use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;

use super::*;
use crate::geo::haversine_km;
use crate::model::ComunaProfile;
use crate::stats::Correlation;

fn profile(id: u32, region: u32, in_scl: bool) -> ComunaProfile {
    ComunaProfile {
        id: ComunaId(id),
        name: format!("C{id}"),
        region: RegionId(region),
        in_scl,
        income_decile: 1.0 + (id % 10) as f64,
        poverty_pct: 10.0,
        rurality: (id % 7) as f64 / 7.0,
        population: 1000.0 * (1 + id % 5) as f64,
        area_km2: 10.0 + id as f64,
        icvu: (id % 3 != 0).then_some(40.0 + id as f64),
        centroid_lat: -20.0 - id as f64 * 0.3,
        centroid_lon: -70.0 - (id % 4) as f64 * 0.2,
    }
}

/// Comunas 1..=4 in the capital, 5 elsewhere in region 13, 6..=9 in regions 5..=8.
fn table() -> ComunaTable {
    let mut v: Vec<ComunaProfile> = (1..=4).map(|i| profile(i, 13, true)).collect();
    v.push(profile(5, 13, false));
    v.extend((6..=9).map(|i| profile(i, i - 1, false)));
    ComunaTable::new(v).unwrap()
}

fn record(device: u64, o: u32, d: u32, t: &ComunaTable) -> MigrationRecord {
    let (or, dr) = (t.get(ComunaId(o)).unwrap().region, t.get(ComunaId(d)).unwrap().region);
    MigrationRecord {
        device: DeviceId(device),
        origin_comuna: ComunaId(o),
        destination_comuna: ComunaId(d),
        origin_region: or,
        destination_region: dr,
        migrated: or != dr,
    }
}

fn series(baseline: Option<u32>, november: Option<u32>) -> HomeSeries {
    HomeSeries {
        device: DeviceId(1),
        weekly_home: vec![],
        baseline_home: baseline.map(ComunaId),
        november_home: november.map(ComunaId),
    }
}

#[test]
fn classification_is_region_level() {
    let t = table();
    let intra = classify(&series(Some(1), Some(5)), &t).unwrap().unwrap();
    assert!(!intra.migrated);
    let out = classify(&series(Some(1), Some(6)), &t).unwrap().unwrap();
    assert!(out.migrated);
    assert_eq!(out.destination_region, RegionId(5));
    assert_eq!(classify(&series(None, Some(6)), &t).unwrap(), None);
    assert_eq!(classify(&series(Some(1), None), &t).unwrap(), None);
    assert!(matches!(classify(&series(Some(1), Some(99)), &t), Err(Error::Validation(_))));

    let all = [series(Some(1), Some(6)), series(None, Some(1)), series(Some(2), None), series(Some(2), Some(3))];
    let (records, stats) = classify_all(&all, &t).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(
        stats,
        ClassifyStats { classified: 2, migrated: 1, missing_baseline: 1, missing_november: 1 }
    );
}

#[test]
fn od_rows_and_bases() {
    let t = table();
    let recs = vec![record(1, 1, 6, &t), record(2, 1, 6, &t), record(3, 1, 7, &t), record(4, 1, 1, &t), record(5, 2, 5, &t)];
    let od = build_od(&recs, Direction::Emigration, Level::Comuna, &t).unwrap();
    assert_eq!(od.row(1).unwrap(), &[2, 1]);
    assert_eq!(od.destinations(), &[6, 7]);
    assert_eq!(od.base(1), 4);
    assert_eq!(od.base(2), 1);
    assert_eq!(od.row_total(2), 0);
    let by_region = build_od(&recs, Direction::Emigration, Level::Region, &t).unwrap();
    assert_eq!(by_region.destinations(), &[5, 6]);

    let stay: Vec<MigrationRecord> = (0..5).map(|i| record(i, 1 + (i as u32 % 3), 5, &t)).collect();
    let od = build_od(&stay, Direction::Emigration, Level::Comuna, &t).unwrap();
    assert_eq!(od.total(), 0);
    assert_eq!(od.bases().collect::<Vec<_>>(), vec![(1, 2), (2, 2), (3, 1)]);
    let pct = emigration_pct(&od).unwrap();
    assert!(pct.values.is_empty() && pct.rows.len() == 3);
}

#[test]
fn immigration_counts_arrivals_into_capital() {
    let t = table();
    let recs = vec![record(1, 6, 1, &t), record(2, 6, 2, &t), record(3, 7, 7, &t), record(4, 5, 1, &t), record(5, 8, 5, &t)];
    let od = build_od(&recs, Direction::Immigration, Level::Comuna, &t).unwrap();
    assert_eq!(od.origins(), &[6, 7, 8]);
    assert_eq!(od.destinations(), &[1, 2]);
    assert_eq!(od.total(), 2);
    assert_eq!(od.base(8), 1);
    let od = build_od(&recs, Direction::Immigration, Level::Region, &t).unwrap();
    assert_eq!(od.origins(), &[5, 6, 7]);
    assert_eq!(od.count(5, 1), 1);
}

#[test]
fn percentages() {
    let base = BTreeMap::from([(1, 1000), (2, 10)]);
    let cells = BTreeMap::from([((1, 9), 5)]);
    let od = OdMatrix::new(Direction::Emigration, Level::Comuna, &base, &cells).unwrap();
    let pct = emigration_pct(&od).unwrap();
    assert_eq!(pct.get(1, 9), 0.5);
    assert_eq!(pct.row(2).unwrap(), &[0.0]);

    let zero = BTreeMap::from([(3, 0)]);
    let od = OdMatrix::new(Direction::Emigration, Level::Comuna, &zero, &BTreeMap::new()).unwrap();
    assert!(matches!(emigration_pct(&od), Err(Error::DegenerateOrigin(3))));

    let over = BTreeMap::from([((1, 9), 2000)]);
    assert!(OdMatrix::new(Direction::Emigration, Level::Comuna, &base, &over).is_err());
}

#[test]
fn net_rate_examples() {
    let net = 125_000.0 - 160_000.0;
    assert_eq!(net, -35_000.0);
    assert!(net_migration_rate(125_000.0, 160_000.0, 7_000_000.0).unwrap() < 0.0);
    assert_eq!(net_migration_rate(5.0, 5.0, 10.0).unwrap(), 0.0);
    let r = net_migration_rate(130_000.0, 95_000.0, 6_000_000.0).unwrap();
    assert!((r - 35.0 / 60.0).abs() < 1e-12);
    assert!(matches!(net_migration_rate(1.0, 0.0, 0.0), Err(Error::Validation(_))));
}

#[test]
fn net_rates_expand_by_comuna_base() {
    let t = table();
    let recs = vec![record(1, 1, 6, &t), record(2, 1, 1, &t), record(3, 6, 1, &t), record(4, 6, 1, &t)];
    let em = build_od(&recs, Direction::Emigration, Level::Comuna, &t).unwrap();
    let im = build_od(&recs, Direction::Immigration, Level::Comuna, &t).unwrap();
    let rates = net_rates(&em, &im, &t).unwrap();
    assert_eq!(rates.len(), 1);
    let r = &rates[0];
    let pop = t.get(ComunaId(1)).unwrap().population;
    assert_eq!((r.device_base, r.immigrant_devices, r.emigrant_devices), (2, 2, 1));
    assert!((r.expansion - pop / 2.0).abs() < 1e-9);
    assert!((r.rate_pct - 100.0 * (2.0 - 1.0) / 2.0).abs() < 1e-9);
}

fn pct(rows: &[u32], cols: &[u32], values: Vec<f64>) -> PctMatrix {
    PctMatrix { rows: rows.to_vec(), cols: cols.to_vec(), values }
}

#[test]
fn zscore_filter_examples() {
    let a = pct(&[1, 2, 3], &[10, 11], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert!(zscore_row_filter(&matrix_difference(&a, &a), DEFAULT_Z_THRESHOLD).is_empty());

    let mut values = vec![0.0; 100];
    values[57] = 10.0;
    let spike = pct(&(0..10).collect::<Vec<_>>(), &(0..10).collect::<Vec<_>>(), values);
    let zero = pct(&[], &[], vec![]);
    let diff = matrix_difference(&zero, &spike);
    assert_eq!(zscore_row_filter(&diff, DEFAULT_Z_THRESHOLD), vec![5]);
    // a negative spike is not kept
    let neg = matrix_difference(&spike, &zero);
    assert!(zscore_row_filter(&neg, DEFAULT_Z_THRESHOLD).is_empty());
}

#[test]
fn difference_aligns_union_of_labels() {
    let a = pct(&[1], &[10], vec![2.0]);
    let b = pct(&[1, 2], &[11], vec![3.0, 4.0]);
    let d = matrix_difference(&a, &b);
    assert_eq!(d.rows, vec![1, 2]);
    assert_eq!(d.cols, vec![10, 11]);
    assert_eq!(d.values, vec![-2.0, 3.0, 0.0, 4.0]);
    assert_eq!(d.transpose().transpose(), d);
}

#[test]
fn divergence_examples() {
    let t = table();
    let centroid = |c: u32| t.get(ComunaId(c)).map(|p| (p.centroid_lat, p.centroid_lon));
    let p = pct(&[1], &[6, 7], vec![30.0, 70.0]);
    assert_eq!(destination_divergence(&p, &p, centroid).unwrap().values[&1], 0.0);

    let a = pct(&[1], &[6], vec![5.0]);
    let b = pct(&[1], &[7], vec![2.0]);
    let w = destination_divergence(&a, &b, centroid).unwrap().values[&1];
    let (p6, p7) = (t.get(ComunaId(6)).unwrap(), t.get(ComunaId(7)).unwrap());
    let expect = haversine_km(p6.centroid_lat, p6.centroid_lon, p7.centroid_lat, p7.centroid_lon);
    assert!((w - expect).abs() < 1e-9);

    let missing = pct(&[2], &[6], vec![1.0]);
    let d = destination_divergence(&a, &missing, centroid).unwrap();
    assert!(d.values.is_empty());
    assert_eq!(d.skipped, vec![1, 2]);
}

#[test]
fn rurality_and_density_examples() {
    let mut v: Vec<ComunaProfile> = (1..=3).map(|i| profile(i, 13, true)).collect();
    v[1].rurality = 0.2;
    v[1].population = 1200.0;
    v[1].area_km2 = 10.0;
    v[2].rurality = 0.4;
    v[2].population = 3000.0;
    v[2].area_km2 = 10.0;
    let t = ComunaTable::new(v).unwrap();
    let year = pct(&[1], &[2, 3], vec![50.0, 50.0]);
    let base = pct(&[1], &[2, 3], vec![100.0, 0.0]);
    let shift = rurality_shift(&year, &base, &t).unwrap();
    assert!((shift.values[&1] - 0.1).abs() < 1e-12);
    assert_eq!(rurality_shift(&base, &base, &t).unwrap().values[&1], 0.0);

    let single = pct(&[1], &[2], vec![3.0]);
    assert!((density_weighted_destination(&single, &t).unwrap().values[&1] - 120.0).abs() < 1e-12);
    let d = density_weighted_destination(&year, &t).unwrap().values[&1];
    assert!((d - 210.0).abs() < 1e-12);

    let empty = pct(&[1], &[2], vec![0.0]);
    assert_eq!(weighted_destination_rurality(&empty, &t).unwrap().skipped, vec![1]);
}

#[test]
fn icvu_examples() {
    let mut v: Vec<ComunaProfile> = (1..=4).map(|i| profile(i, 13, true)).collect();
    v[0].icvu = Some(50.0);
    v[1].icvu = Some(60.0);
    v[2].icvu = Some(40.0);
    v[3].icvu = None;
    let t = ComunaTable::new(v).unwrap();
    let sym = pct(&[1], &[2, 3], vec![10.0, 10.0]);
    assert_eq!(icvu_tradeoff(&sym, &t).unwrap().values[&1], 0.0);
    let same = pct(&[2], &[2], vec![4.0]);
    assert_eq!(icvu_tradeoff(&same, &t).unwrap().values[&2], 0.0);
    // uncovered destination 4 drops out of the weights
    let partial = pct(&[1], &[2, 4], vec![1.0, 9.0]);
    assert_eq!(icvu_tradeoff(&partial, &t).unwrap().values[&1], 10.0);
    let none = pct(&[1, 4], &[4, 2], vec![5.0, 0.0, 1.0, 1.0]);
    assert_eq!(icvu_tradeoff(&none, &t).unwrap().skipped, vec![1, 4]);
}

fn region(id: u32, pop: f64, lat: f64) -> RegionAggregate {
    RegionAggregate { region: RegionId(id), population: pop, centroid_lat: lat, centroid_lon: -70.0 }
}

#[test]
fn gravity_examples() {
    let scl = (-33.0, -70.0);
    let km = 111.19; // ≈ one degree of latitude
    let regions = [region(1, 1e5, -33.0 + 200.0 / km), region(2, 1e5, -33.0 - 100.0 / km), region(13, 7e6, -33.0)];
    let ranked = gravity_rank(&regions, &BTreeMap::from([(2, 7)]), scl).unwrap();
    assert_eq!(ranked.iter().map(|r| r.region.0).collect::<Vec<_>>(), vec![2, 1]);
    assert_eq!(ranked[0].inflow_from_scl, 7);
    let doubled: Vec<_> = regions.iter().map(|r| RegionAggregate { population: 2.0 * r.population, ..*r }).collect();
    let again = gravity_rank(&doubled, &BTreeMap::new(), scl).unwrap();
    assert_eq!(again.iter().map(|r| r.region).collect::<Vec<_>>(), ranked.iter().map(|r| r.region).collect::<Vec<_>>());
    let on_top = [region(4, 1.0, -33.0)];
    assert!(matches!(gravity_rank(&on_top, &BTreeMap::new(), scl), Err(Error::DegenerateGeometry(_))));
}

#[test]
fn hosting_examples() {
    let base = BTreeMap::from([(1, 100)]);
    let cells = BTreeMap::from([((1, 11), 13)]);
    let od = OdMatrix::new(Direction::Emigration, Level::Region, &base, &cells).unwrap();
    let regions = [region(11, 1000.0, -45.0), region(12, 500.0, -50.0)];
    let h = hosting_impact(&od, &regions, 1.0).unwrap();
    assert!((h[&11] - 1.3).abs() < 1e-12);
    assert_eq!(h[&12], 0.0);
    let bad = [region(11, 0.0, -45.0)];
    assert!(matches!(hosting_impact(&od, &bad, 1.0), Err(Error::Validation(_))));
}

#[test]
fn census_examples() {
    let row = |d: Direction, o: &str, dest: &str, f: f64| FlowRow {
        level: CensusLevel::RegionsScl,
        direction: d,
        origin: o.into(),
        destination: dest.into(),
        flow: f,
    };
    let model: Vec<FlowRow> = (1..=5)
        .flat_map(|r| {
            [
                row(Direction::Emigration, "SCL", &r.to_string(), (r * r) as f64),
                row(Direction::Immigration, &r.to_string(), "SCL", (10 - r) as f64),
            ]
        })
        .collect();
    let same = census_validation(&model, &model, CensusLevel::RegionsScl).unwrap();
    assert!((same.emigration.r - 1.0).abs() < 1e-12 && (same.immigration.r - 1.0).abs() < 1e-12);
    assert_eq!(same.emigration.df, 3);
    let neg: Vec<FlowRow> = model.iter().map(|r| FlowRow { flow: 100.0 - r.flow, ..r.clone() }).collect();
    let anti = census_validation(&model, &neg, CensusLevel::RegionsScl).unwrap();
    assert!((anti.emigration.r + 1.0).abs() < 1e-12);
    assert!(matches!(
        census_validation(&model[..4], &model[..4], CensusLevel::RegionsScl),
        Err(Error::InsufficientData(_))
    ));
    let _: &Correlation = &anti.immigration;
}

#[test]
fn model_flows_per_level() {
    let t = table();
    let recs = vec![record(1, 1, 6, &t), record(2, 2, 6, &t), record(3, 6, 1, &t), record(4, 1, 5, &t), record(5, 1, 2, &t)];
    let flows = model_flows(&recs, &t, CensusLevel::RegionsScl);
    let get = |fl: &[FlowRow], d: Direction, o: &str, de: &str| {
        fl.iter().find(|f| f.direction == d && f.origin == o && f.destination == de).map(|f| f.flow)
    };
    assert_eq!(get(&flows, Direction::Emigration, "SCL", "5"), Some(2.0));
    assert_eq!(get(&flows, Direction::Immigration, "5", "SCL"), Some(1.0));
    assert_eq!(flows.len(), 2);
    let flows = model_flows(&recs, &t, CensusLevel::CountrySclComunas);
    assert_eq!(get(&flows, Direction::Emigration, "1", "COUNTRY"), Some(1.0));
    assert_eq!(get(&flows, Direction::Immigration, "COUNTRY", "1"), Some(1.0));
}

#[test]
fn records_csv_round_trip() {
    let t = table();
    let recs = vec![record(1, 1, 6, &t), record(u64::MAX, 2, 5, &t)];
    let mut buf = Vec::new();
    write_records_csv(&mut buf, &recs).unwrap();
    assert_eq!(read_records_csv(buf.as_slice()).unwrap(), recs);
    let bad = format!("{RECORDS_CSV_HEADER}\n1,1,6,13,5,false\n");
    assert!(matches!(read_records_csv(bad.as_bytes()), Err(Error::Validation(_))));
}

fn records_strategy() -> impl Strategy<Value = Vec<(u32, u32)>> {
    prop::collection::vec((1u32..=9, 1u32..=9), 0..300)
}

fn od_strategy() -> impl Strategy<Value = (PctMatrix, PctMatrix)> {
    let m = || prop::collection::vec(prop_oneof![Just(0.0), 0.0..100.0f64], 4 * 5);
    (m(), m()).prop_map(|(a, b)| {
        let rows = vec![1, 2, 3, 4];
        let cols = vec![5, 6, 7, 8, 9];
        (pct(&rows, &cols, a), pct(&rows, &cols, b))
    })
}

proptest! {
    #[test]
    fn od_marginals_match_group_by(pairs in records_strategy()) {
        let t = table();
        let recs: Vec<MigrationRecord> =
            pairs.iter().enumerate().map(|(i, &(o, d))| record(i as u64, o, d, &t)).collect();
        for dir in [Direction::Emigration, Direction::Immigration] {
            for level in [Level::Comuna, Level::Region] {
                let od = build_od(&recs, dir, level, &t).unwrap();
                let mut rows: HashMap<u32, u64> = HashMap::new();
                let mut cols: HashMap<u32, u64> = HashMap::new();
                let mut bases: HashMap<u32, u64> = HashMap::new();
                for r in &recs {
                    let lab = |c: ComunaId, g: RegionId| if level == Level::Comuna { c.0 } else { g.0 };
                    let (eligible, counted, o, d) = match dir {
                        Direction::Emigration => (
                            t.is_scl(r.origin_comuna),
                            r.migrated,
                            r.origin_comuna.0,
                            lab(r.destination_comuna, r.destination_region),
                        ),
                        Direction::Immigration => (
                            r.origin_region != METROPOLITAN_REGION,
                            t.is_scl(r.destination_comuna),
                            lab(r.origin_comuna, r.origin_region),
                            r.destination_comuna.0,
                        ),
                    };
                    if eligible {
                        *bases.entry(o).or_default() += 1;
                        if counted {
                            *rows.entry(o).or_default() += 1;
                            *cols.entry(d).or_default() += 1;
                        }
                    }
                }
                for (o, b) in od.bases() {
                    prop_assert_eq!(bases[&o], b);
                    prop_assert_eq!(rows.get(&o).copied().unwrap_or(0), od.row_total(o));
                }
                prop_assert_eq!(bases.len(), od.origins().len());
                for &d in od.destinations() {
                    prop_assert_eq!(cols[&d], od.column_total(d));
                }
                prop_assert_eq!(od.total(), rows.values().sum::<u64>());
                if dir == Direction::Emigration {
                    prop_assert_eq!(od.total(), recs.iter().filter(|r| r.migrated && t.is_scl(r.origin_comuna)).count() as u64);
                }
                let p = emigration_pct(&od).unwrap();
                for &o in od.origins() {
                    let sum: f64 = p.row(o).unwrap().iter().sum();
                    let expect = 100.0 * od.row_total(o) as f64 / od.base(o) as f64;
                    prop_assert!((sum - expect).abs() < 1e-9);
                    prop_assert!(sum <= 100.0 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn zscore_matches_two_pass_oracle((a, b) in od_strategy(), threshold in 0.5..3.0f64) {
        let diff = matrix_difference(&a, &b);
        let n = diff.values.len() as f64;
        let mean = diff.values.iter().sum::<f64>() / n;
        let std = (diff.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let expect: Vec<u32> = diff
            .rows
            .iter()
            .filter(|&&r| diff.cols.iter().any(|&c| (diff.get(r, c) - mean) / std > threshold))
            .copied()
            .collect();
        prop_assert_eq!(zscore_row_filter(&diff, threshold), expect);
    }

    #[test]
    fn weighted_analytics_match_double_loop((a, b) in od_strategy()) {
        let t = table();
        let shift = rurality_shift(&a, &b, &t).unwrap();
        let density = density_weighted_destination(&a, &t).unwrap();
        for &o in &a.rows {
            let r_of = |m: &PctMatrix| {
                let (mut num, mut den) = (0.0, 0.0);
                for &d in &m.cols {
                    num += m.get(o, d) * t.get(ComunaId(d)).unwrap().rurality;
                    den += m.get(o, d);
                }
                (den > 0.0).then(|| num / den)
            };
            match (r_of(&a), r_of(&b)) {
                (Some(x), Some(y)) => {
                    let got = shift.values[&o];
                    prop_assert!((got - (x - y)).abs() <= 1e-12);
                    prop_assert!((-1.0..=1.0).contains(&got));
                }
                _ => prop_assert!(shift.skipped.contains(&o)),
            }
            let (mut num, mut den) = (0.0, 0.0);
            for &d in &a.cols {
                num += a.get(o, d) * t.get(ComunaId(d)).unwrap().density();
                den += a.get(o, d);
            }
            if den > 0.0 {
                let got = density.values[&o];
                prop_assert!((got - num / den).abs() <= 1e-12 * got.abs().max(1.0));
            }
        }
        // counts and percentages give the same weighted means
        let scaled = PctMatrix { values: a.values.iter().map(|v| v * 37.0).collect(), ..a.clone() };
        let again = density_weighted_destination(&scaled, &t).unwrap();
        for (o, v) in &density.values {
            prop_assert!((again.values[o] - v).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }

    #[test]
    fn icvu_matches_renormalized_oracle((a, _) in od_strategy()) {
        let t = table();
        let got = icvu_tradeoff(&a, &t).unwrap();
        for &o in &a.rows {
            let oi = t.get(ComunaId(o)).unwrap().icvu;
            let (mut num, mut den) = (0.0, 0.0);
            for &d in &a.cols {
                if let (Some(x), Some(y)) = (oi, t.get(ComunaId(d)).unwrap().icvu) {
                    num += a.get(o, d) * (y - x);
                    den += a.get(o, d);
                }
            }
            if den > 0.0 {
                prop_assert!((got.values[&o] - num / den).abs() < 1e-9);
            } else {
                prop_assert!(got.skipped.contains(&o));
            }
        }
    }

    #[test]
    fn divergence_is_symmetric((a, b) in od_strategy()) {
        let t = table();
        let centroid = |c: u32| t.get(ComunaId(c)).map(|p| (p.centroid_lat, p.centroid_lon));
        let ab = destination_divergence(&a, &b, centroid).unwrap();
        let ba = destination_divergence(&b, &a, centroid).unwrap();
        prop_assert_eq!(&ab.skipped, &ba.skipped);
        for (o, v) in &ab.values {
            prop_assert!((v - ba.values[o]).abs() < 1e-9);
        }
        for v in destination_divergence(&a, &a, centroid).unwrap().values.values() {
            prop_assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn gravity_matches_naive_sort(
        pops in prop::collection::vec(1.0..1e6f64, 1..12),
        lats in prop::collection::vec(-55.0..-18.0f64, 12),
        factor in 0.01..100.0f64,
    ) {
        let scl = (-33.45, -70.66);
        let regions: Vec<RegionAggregate> =
            pops.iter().enumerate().map(|(i, &p)| region(i as u32 + 20, p, lats[i])).collect();
        prop_assume!(regions.iter().all(|r| r.centroid_lat != scl.0));
        let ranked = gravity_rank(&regions, &BTreeMap::new(), scl).unwrap();
        let mut naive: Vec<(f64, u32)> = regions
            .iter()
            .map(|r| (r.population / haversine_km(r.centroid_lat, r.centroid_lon, scl.0, scl.1), r.region.0))
            .collect();
        naive.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        prop_assert_eq!(ranked.iter().map(|r| r.region.0).collect::<Vec<_>>(), naive.iter().map(|n| n.1).collect::<Vec<_>>());
        let scaled: Vec<_> = regions.iter().map(|r| RegionAggregate { population: r.population * factor, ..*r }).collect();
        let again = gravity_rank(&scaled, &BTreeMap::new(), scl).unwrap();
        prop_assert_eq!(again.iter().map(|r| r.region).collect::<Vec<_>>(), ranked.iter().map(|r| r.region).collect::<Vec<_>>());
    }

    #[test]
    fn percentages_invariant_under_expansion(pairs in records_strategy(), k in 2u64..5) {
        let t = table();
        let recs: Vec<MigrationRecord> =
            pairs.iter().enumerate().map(|(i, &(o, d))| record(i as u64, o, d, &t)).collect();
        let many: Vec<MigrationRecord> = (0..k)
            .flat_map(|j| recs.iter().map(move |r| MigrationRecord { device: DeviceId(r.device.0 * 10 + j), ..*r }))
            .collect();
        let a = emigration_pct(&build_od(&recs, Direction::Emigration, Level::Comuna, &t).unwrap()).unwrap();
        let b = emigration_pct(&build_od(&many, Direction::Emigration, Level::Comuna, &t).unwrap()).unwrap();
        prop_assert_eq!(&a.rows, &b.rows);
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
