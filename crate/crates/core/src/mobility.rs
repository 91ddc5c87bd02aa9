//! Daily mobility indices per comuna, relative to the baseline week.
//!
//! A trip is a pair of consecutive same-day events of one device on
//! different antennas: internal when both antennas lie in one comuna,
//! external otherwise. Trips are credited to the device's home comuna for
//! the current week and normalized by the number of active residents.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::home::HomeSeries;
use crate::ingest::{AntennaRegistry, QuarantineSchedule};
use crate::model::{AntennaId, ComunaId, DeviceId, XdrEvent};
use crate::window::StudyWindow;

pub const INDEX_DAILY_HEADER: &str = "comuna,date,im_internal,im_external,im_total,change_internal,change_external,change_total,active_devices,internal_trips,external_trips";
pub const INDEX_SUMMARY_HEADER: &str = "comuna,mean_reduction,quarantine_mean,free_mean,days_q,days_free";

/// Trips of one device-day.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DayTrips {
    pub internal: u64,
    pub external: u64,
}

/// Adjacent-pair trip count over one device-day of time-ordered antennas.
/// Antennas missing from the registry break the chain.
pub fn count_trips(antennas: &[AntennaId], registry: &AntennaRegistry) -> DayTrips {
    let mut t = DayTrips::default();
    for w in antennas.windows(2) {
        if w[0] == w[1] {
            continue;
        }
        match (registry.comuna_of(w[0]), registry.comuna_of(w[1])) {
            (Some(a), Some(b)) if a == b => t.internal += 1,
            (Some(_), Some(_)) => t.external += 1,
            _ => {}
        }
    }
    t
}

/// Per comuna-day totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayCounts {
    pub internal_trips: u64,
    pub external_trips: u64,
    /// Resident devices with at least one event that day.
    pub active_devices: u64,
}

impl DayCounts {
    fn add(&mut self, o: &DayCounts) {
        self.internal_trips += o.internal_trips;
        self.external_trips += o.external_trips;
        self.active_devices += o.active_devices;
    }
}

/// Comuna × day table of trip counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripCounts {
    comunas: Vec<ComunaId>,
    n_days: usize,
    cells: Vec<DayCounts>,
}

impl TripCounts {
    pub fn new(comunas: impl IntoIterator<Item = ComunaId>, n_days: usize) -> Self {
        let comunas: Vec<ComunaId> = comunas.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let cells = vec![DayCounts::default(); comunas.len() * n_days];
        TripCounts { comunas, n_days, cells }
    }

    pub fn comunas(&self) -> &[ComunaId] {
        &self.comunas
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn day(&self, comuna: ComunaId, day: usize) -> Option<&DayCounts> {
        let i = self.comunas.binary_search(&comuna).ok()?;
        self.cells.get(i * self.n_days + day)
    }

    pub fn day_mut(&mut self, comuna: ComunaId, day: usize) -> Option<&mut DayCounts> {
        let i = self.comunas.binary_search(&comuna).ok()?;
        self.cells.get_mut(i * self.n_days + day)
    }

    pub fn series(&self, comuna: ComunaId) -> Option<&[DayCounts]> {
        let i = self.comunas.binary_search(&comuna).ok()?;
        Some(&self.cells[i * self.n_days..(i + 1) * self.n_days])
    }

    /// Cell-wise sum; both tables must share comunas and length.
    pub fn merge(&mut self, other: &TripCounts) -> Result<()> {
        if self.comunas != other.comunas || self.n_days != other.n_days {
            return Err(Error::validation("trip tables have different shapes"));
        }
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.add(b);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MobilityStats {
    pub events: u64,
    pub device_days: u64,
    /// Device-days whose week has no inferred home.
    pub device_days_without_home: u64,
    /// Events of devices absent from the home series.
    pub events_unknown_device: u64,
}

impl MobilityStats {
    pub fn merge(&mut self, o: &MobilityStats) {
        self.events += o.events;
        self.device_days += o.device_days;
        self.device_days_without_home += o.device_days_without_home;
        self.events_unknown_device += o.events_unknown_device;
    }
}

#[derive(Clone, Copy, Debug)]
struct DeviceState {
    last_ts: i64,
    last_day: usize,
    last_antenna: AntennaId,
    /// Home of `last_day`, if any.
    home: Option<ComunaId>,
}

/// Streaming trip counter. Per device, events must arrive in time order
/// (files sorted by time, or by device then time, both qualify); state is
/// one entry per device.
pub struct MobilityAccumulator<'a> {
    window: &'a StudyWindow,
    registry: &'a AntennaRegistry,
    homes: &'a HashMap<DeviceId, Vec<Option<ComunaId>>>,
    state: HashMap<DeviceId, DeviceState>,
    counts: TripCounts,
    stats: MobilityStats,
}

/// Weekly homes keyed by device.
pub fn home_lookup(series: &[HomeSeries]) -> HashMap<DeviceId, Vec<Option<ComunaId>>> {
    series.iter().map(|s| (s.device, s.weekly_home.clone())).collect()
}

/// Every comuna that is some device's home in some week.
pub fn home_comunas(homes: &HashMap<DeviceId, Vec<Option<ComunaId>>>) -> BTreeSet<ComunaId> {
    homes.values().flat_map(|w| w.iter().flatten().copied()).collect()
}

impl<'a> MobilityAccumulator<'a> {
    pub fn new(
        window: &'a StudyWindow,
        registry: &'a AntennaRegistry,
        homes: &'a HashMap<DeviceId, Vec<Option<ComunaId>>>,
        comunas: impl IntoIterator<Item = ComunaId>,
    ) -> Self {
        MobilityAccumulator {
            window,
            registry,
            homes,
            state: HashMap::new(),
            counts: TripCounts::new(comunas, window.n_days()),
            stats: MobilityStats::default(),
        }
    }

    fn home_on(&self, device: DeviceId, day: usize) -> Option<ComunaId> {
        let weeks = self.homes.get(&device)?;
        weeks.get(self.window.week_of_day_index(day)).copied().flatten()
    }

    pub fn observe(&mut self, ev: &XdrEvent) -> Result<()> {
        self.stats.events += 1;
        if !self.homes.contains_key(&ev.device) {
            self.stats.events_unknown_device += 1;
            return Ok(());
        }
        let Some(day) = self.window.day_index(ev.timestamp) else {
            return Ok(());
        };
        let prev = self.state.get(&ev.device).copied();
        if let Some(p) = prev {
            if ev.timestamp < p.last_ts {
                return Err(Error::validation(format!(
                    "events of device {} are not in time order ({} after {})",
                    ev.device, ev.timestamp, p.last_ts
                )));
            }
        }
        let same_day = prev.filter(|p| p.last_day == day);
        let home = match same_day {
            Some(p) => p.home,
            None => {
                let home = self.home_on(ev.device, day);
                self.stats.device_days += 1;
                match home.and_then(|h| self.counts.day_mut(h, day)) {
                    Some(cell) => cell.active_devices += 1,
                    None => self.stats.device_days_without_home += 1,
                }
                home
            }
        };
        if let (Some(p), Some(h)) = (same_day, home) {
            if p.last_antenna != ev.antenna {
                let trip = count_trips(&[p.last_antenna, ev.antenna], self.registry);
                if let Some(cell) = self.counts.day_mut(h, day) {
                    cell.internal_trips += trip.internal;
                    cell.external_trips += trip.external;
                }
            }
        }
        self.state.insert(
            ev.device,
            DeviceState { last_ts: ev.timestamp, last_day: day, last_antenna: ev.antenna, home },
        );
        Ok(())
    }

    pub fn finish(self) -> (TripCounts, MobilityStats) {
        (self.counts, self.stats)
    }
}

/// Index values of one comuna-day, trips per active device.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayIndex {
    pub internal: f64,
    pub external: f64,
    /// Always `internal + external`.
    pub total: f64,
}

impl DayIndex {
    fn from_counts(c: &DayCounts) -> Option<DayIndex> {
        if c.active_devices == 0 {
            return None;
        }
        let a = c.active_devices as f64;
        let internal = c.internal_trips as f64 / a;
        let external = c.external_trips as f64 / a;
        Some(DayIndex { internal, external, total: internal + external })
    }

    fn parts(&self) -> [f64; 3] {
        [self.internal, self.external, self.total]
    }
}

/// Percent change against the baseline mean, per index; `None` where the
/// baseline mean is zero.
pub type Change = [Option<f64>; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexSeries {
    pub comuna: ComunaId,
    pub counts: Vec<DayCounts>,
    pub index: Vec<Option<DayIndex>>,
    /// Mean internal, external and total index over the baseline week.
    pub baseline_mean: [f64; 3],
    pub change: Vec<Option<Change>>,
}

impl IndexSeries {
    pub fn total_change(&self, day: usize) -> Option<f64> {
        self.change[day].and_then(|c| c[2])
    }

    /// Mean over the study period of the negated total-index change.
    pub fn mean_reduction(&self) -> Option<f64> {
        let v: Vec<f64> = (0..self.change.len()).filter_map(|d| self.total_change(d)).collect();
        (!v.is_empty()).then(|| -v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexSet {
    pub series: Vec<IndexSeries>,
    /// Comunas with no active residents on any baseline day.
    pub no_baseline: Vec<ComunaId>,
}

/// Index series of one comuna from its daily counts.
pub fn index_series(comuna: ComunaId, counts: &[DayCounts], window: &StudyWindow) -> Result<IndexSeries> {
    let index: Vec<Option<DayIndex>> = counts.iter().map(DayIndex::from_counts).collect();
    let base_days: Vec<[f64; 3]> = window.baseline_day_indices().filter_map(|d| index[d].map(|i| i.parts())).collect();
    if base_days.is_empty() {
        return Err(Error::NoBaseline(comuna.0));
    }
    let mut baseline_mean = [0.0; 3];
    for k in 0..3 {
        baseline_mean[k] = base_days.iter().map(|p| p[k]).sum::<f64>() / base_days.len() as f64;
    }
    let change = index
        .iter()
        .map(|i| {
            i.map(|i| {
                let p = i.parts();
                let mut c = [None; 3];
                for k in 0..3 {
                    if baseline_mean[k] != 0.0 {
                        c[k] = Some(100.0 * (p[k] - baseline_mean[k]) / baseline_mean[k]);
                    }
                }
                c
            })
        })
        .collect();
    Ok(IndexSeries { comuna, counts: counts.to_vec(), index, baseline_mean, change })
}

/// Index series for every comuna of the table; comunas without a baseline
/// are listed separately.
pub fn build_index_series(counts: &TripCounts, window: &StudyWindow) -> Result<IndexSet> {
    if counts.n_days() != window.n_days() {
        return Err(Error::validation("trip table does not span the study window"));
    }
    let mut set = IndexSet::default();
    for &c in counts.comunas() {
        match index_series(c, counts.series(c).expect("listed comuna"), window) {
            Ok(s) => set.series.push(s),
            Err(Error::NoBaseline(_)) => set.no_baseline.push(c),
            Err(e) => return Err(e),
        }
    }
    Ok(set)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strata {
    pub comuna: ComunaId,
    pub quarantine_mean: Option<f64>,
    pub free_mean: Option<f64>,
    pub days_q: usize,
    pub days_free: usize,
}

/// Mean total-index change over quarantine and quarantine-free days.
pub fn stratify_by_quarantine(series: &IndexSeries, schedule: &QuarantineSchedule, window: &StudyWindow) -> Strata {
    let (mut q, mut f) = (Vec::new(), Vec::new());
    for d in 0..series.change.len() {
        if let Some(c) = series.total_change(d) {
            if schedule.in_quarantine(series.comuna, window.date_of_day_index(d)) {
                q.push(c);
            } else {
                f.push(c);
            }
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Strata { comuna: series.comuna, quarantine_mean: mean(&q), free_mean: mean(&f), days_q: q.len(), days_free: f.len() }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_index_daily<W: Write>(mut out: W, set: &IndexSet, window: &StudyWindow) -> Result<()> {
    writeln!(out, "{INDEX_DAILY_HEADER}")?;
    for s in &set.series {
        for d in 0..s.index.len() {
            let date = window.date_of_day_index(d);
            let c = &s.counts[d];
            let (i, ch) = (s.index[d], s.change[d].unwrap_or([None; 3]));
            writeln!(
                out,
                "{},{date},{},{},{},{},{},{},{},{},{}",
                s.comuna,
                opt(i.map(|i| i.internal)),
                opt(i.map(|i| i.external)),
                opt(i.map(|i| i.total)),
                opt(ch[0]),
                opt(ch[1]),
                opt(ch[2]),
                c.active_devices,
                c.internal_trips,
                c.external_trips
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row of `index_summary.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub comuna: ComunaId,
    pub mean_reduction: Option<f64>,
    pub quarantine_mean: Option<f64>,
    pub free_mean: Option<f64>,
    pub days_q: usize,
    pub days_free: usize,
}

pub fn summary_rows(set: &IndexSet, schedule: &QuarantineSchedule, window: &StudyWindow) -> Vec<SummaryRow> {
    set.series
        .iter()
        .map(|s| {
            let st = stratify_by_quarantine(s, schedule, window);
            SummaryRow {
                comuna: s.comuna,
                mean_reduction: s.mean_reduction(),
                quarantine_mean: st.quarantine_mean,
                free_mean: st.free_mean,
                days_q: st.days_q,
                days_free: st.days_free,
            }
        })
        .collect()
}

pub fn write_index_summary<W: Write>(mut out: W, rows: &[SummaryRow]) -> Result<()> {
    writeln!(out, "{INDEX_SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.comuna,
            opt(r.mean_reduction),
            opt(r.quarantine_mean),
            opt(r.free_mean),
            r.days_q,
            r.days_free
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_index_summary<R: BufRead>(source: R) -> Result<Vec<SummaryRow>> {
    let mut lines = source.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header != INDEX_SUMMARY_HEADER {
        return Err(Error::schema(format!("index summary header must be `{INDEX_SUMMARY_HEADER}`")));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = || Error::schema(format!("bad index summary row `{line}`"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        let real = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad())
            }
        };
        rows.push(SummaryRow {
            comuna: ComunaId(f[0].parse().map_err(|_| bad())?),
            mean_reduction: real(f[1])?,
            quarantine_mean: real(f[2])?,
            free_mean: real(f[3])?,
            days_q: f[4].parse().map_err(|_| bad())?,
            days_free: f[5].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

/// Reads `index_daily.csv` back into per-comuna trip counts.
pub fn read_index_daily<R: BufRead>(source: R, window: &StudyWindow) -> Result<TripCounts> {
    let mut lines = source.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header != INDEX_DAILY_HEADER {
        return Err(Error::schema(format!("index daily header must be `{INDEX_DAILY_HEADER}`")));
    }
    let mut rows: Vec<(ComunaId, usize, DayCounts)> = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = || Error::schema(format!("bad index daily row `{line}`"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(bad());
        }
        let date = NaiveDate::parse_from_str(f[1], "%Y-%m-%d").map_err(|_| bad())?;
        let day = window
            .day_index_of_date(date)
            .ok_or_else(|| Error::validation(format!("date {date} outside the study window")))?;
        let n = |s: &str| s.parse::<u64>().map_err(|_| bad());
        rows.push((
            ComunaId(f[0].parse().map_err(|_| bad())?),
            day,
            DayCounts { active_devices: n(f[8])?, internal_trips: n(f[9])?, external_trips: n(f[10])? },
        ));
    }
    let mut t = TripCounts::new(rows.iter().map(|r| r.0), window.n_days());
    for (c, d, counts) in rows {
        *t.day_mut(c, d).expect("comuna registered") = counts;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::QuarantineInterval;
    use crate::model::Antenna;
    use proptest::prelude::*;

    fn registry() -> AntennaRegistry {
        // antennas 1-3 in comuna 10, 4-6 in comuna 20
        AntennaRegistry::new((1..=6).map(|i| Antenna {
            id: AntennaId(i),
            lat: -33.0,
            lon: -70.0,
            comuna: ComunaId(if i <= 3 { 10 } else { 20 }),
        }))
        .unwrap()
    }

    fn window() -> StudyWindow {
        StudyWindow::new(2020, -4).unwrap()
    }

    #[test]
    fn pairwise_trip_definition() {
        let r = registry();
        let a = |v: &[u32]| v.iter().map(|&x| AntennaId(x)).collect::<Vec<_>>();
        assert_eq!(count_trips(&a(&[1, 1, 1]), &r), DayTrips::default());
        assert_eq!(count_trips(&a(&[1, 2, 4]), &r), DayTrips { internal: 1, external: 1 });
        assert_eq!(count_trips(&a(&[]), &r), DayTrips::default());
        assert_eq!(count_trips(&a(&[4, 1, 4, 5]), &r), DayTrips { internal: 1, external: 2 });
    }

    fn constant_counts(w: &StudyWindow, f: impl Fn(usize) -> DayCounts) -> Vec<DayCounts> {
        (0..w.n_days()).map(f).collect()
    }

    #[test]
    fn constant_mobility_has_no_change() {
        let w = window();
        let counts = constant_counts(&w, |_| DayCounts { internal_trips: 30, external_trips: 10, active_devices: 20 });
        let s = index_series(ComunaId(1), &counts, &w).unwrap();
        assert!(s.change.iter().all(|c| c.unwrap().iter().all(|v| *v == Some(0.0))));
        assert_eq!(s.mean_reduction(), Some(0.0));
    }

    #[test]
    fn halving_after_baseline() {
        let w = window();
        let end = w.baseline_day_indices().end;
        let counts = constant_counts(&w, |d| DayCounts {
            internal_trips: if d < end { 40 } else { 20 },
            external_trips: if d < end { 20 } else { 10 },
            active_devices: 10,
        });
        let s = index_series(ComunaId(1), &counts, &w).unwrap();
        for d in end..w.n_days() {
            assert_eq!(s.change[d].unwrap(), [Some(-50.0); 3]);
        }
        let expect = 50.0 * (w.n_days() - end) as f64 / w.n_days() as f64;
        assert!((s.mean_reduction().unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn missing_baseline_is_flagged() {
        let w = window();
        let base = w.baseline_day_indices();
        let counts = constant_counts(&w, |d| DayCounts {
            internal_trips: 1,
            external_trips: 0,
            active_devices: if base.contains(&d) { 0 } else { 1 },
        });
        assert!(matches!(index_series(ComunaId(3), &counts, &w), Err(Error::NoBaseline(3))));
        let mut t = TripCounts::new([ComunaId(3)], w.n_days());
        for (d, c) in counts.iter().enumerate() {
            *t.day_mut(ComunaId(3), d).unwrap() = *c;
        }
        let set = build_index_series(&t, &w).unwrap();
        assert_eq!(set.no_baseline, vec![ComunaId(3)]);
        // zero baseline for one index leaves that change undefined
        let counts = constant_counts(&w, |_| DayCounts { internal_trips: 5, external_trips: 0, active_devices: 5 });
        let s = index_series(ComunaId(3), &counts, &w).unwrap();
        assert_eq!(s.change[0].unwrap(), [Some(0.0), None, Some(0.0)]);
    }

    #[test]
    fn quarantine_strata() {
        let w = window();
        let counts = constant_counts(&w, |d| DayCounts { internal_trips: 10 + (d % 3) as u64, external_trips: 5, active_devices: 5 });
        let s = index_series(ComunaId(7), &counts, &w).unwrap();
        let none = stratify_by_quarantine(&s, &QuarantineSchedule::default(), &w);
        assert_eq!((none.quarantine_mean, none.days_q, none.days_free), (None, 0, w.n_days()));
        let all = QuarantineSchedule::new([QuarantineInterval {
            comuna: ComunaId(7),
            start: w.start_date(),
            end: w.end_date(),
        }])
        .unwrap();
        let st = stratify_by_quarantine(&s, &all, &w);
        assert_eq!((st.free_mean, st.days_q, st.days_free), (None, w.n_days(), 0));
    }

    fn ts(w: &StudyWindow, day: usize, sec: i64) -> i64 {
        w.start_utc() + day as i64 * 86_400 + sec
    }

    #[test]
    fn accumulator_credits_weekly_home() {
        let w = window();
        let r = registry();
        let n_weeks = w.n_weeks();
        let mut weeks = vec![Some(ComunaId(10)); n_weeks];
        weeks[2] = None;
        let homes = HashMap::from([(DeviceId(1), weeks)]);
        let mut acc = MobilityAccumulator::new(&w, &r, &homes, [ComunaId(10), ComunaId(20)]);
        let d = 1; // inside week 0
        for (k, a) in [1, 2, 4, 4, 1].into_iter().enumerate() {
            acc.observe(&XdrEvent { device: DeviceId(1), timestamp: ts(&w, d, 3600 * (9 + k as i64)), antenna: AntennaId(a) }).unwrap();
        }
        // next day, a single event
        acc.observe(&XdrEvent { device: DeviceId(1), timestamp: ts(&w, d + 1, 60), antenna: AntennaId(5) }).unwrap();
        // a day in the homeless week
        let homeless = w.baseline_day_indices().start;
        assert_eq!(w.week_of_day_index(homeless), w.baseline_week());
        acc.observe(&XdrEvent { device: DeviceId(9), timestamp: ts(&w, d + 1, 70), antenna: AntennaId(5) }).unwrap();
        let (t, stats) = acc.finish();
        assert_eq!(*t.day(ComunaId(10), d).unwrap(), DayCounts { internal_trips: 1, external_trips: 2, active_devices: 1 });
        assert_eq!(*t.day(ComunaId(10), d + 1).unwrap(), DayCounts { internal_trips: 0, external_trips: 0, active_devices: 1 });
        assert_eq!(t.day(ComunaId(20), d).unwrap().active_devices, 0);
        assert_eq!(stats.events_unknown_device, 1);
        assert_eq!(stats.device_days, 2);
    }

    #[test]
    fn accumulator_rejects_disorder_and_skips_homeless_weeks() {
        let w = window();
        let r = registry();
        let mut weeks = vec![Some(ComunaId(10)); w.n_weeks()];
        let wk = 3;
        weeks[wk] = None;
        let homes = HashMap::from([(DeviceId(1), weeks)]);
        let mut acc = MobilityAccumulator::new(&w, &r, &homes, [ComunaId(10)]);
        let day = w.day_index_of_date(w.week_start(wk)).unwrap();
        acc.observe(&XdrEvent { device: DeviceId(1), timestamp: ts(&w, day, 100), antenna: AntennaId(1) }).unwrap();
        acc.observe(&XdrEvent { device: DeviceId(1), timestamp: ts(&w, day, 200), antenna: AntennaId(2) }).unwrap();
        let err = acc.observe(&XdrEvent { device: DeviceId(1), timestamp: ts(&w, day, 150), antenna: AntennaId(2) });
        assert!(matches!(err, Err(Error::Validation(_))));
        let (t, stats) = acc.finish();
        assert_eq!(stats.device_days_without_home, 1);
        assert_eq!(t.day(ComunaId(10), day).unwrap(), &DayCounts::default());
    }

    #[test]
    fn csv_round_trips() {
        let w = window();
        let mut t = TripCounts::new([ComunaId(1), ComunaId(2)], w.n_days());
        for d in 0..w.n_days() {
            *t.day_mut(ComunaId(1), d).unwrap() = DayCounts { internal_trips: d as u64, external_trips: 3, active_devices: 4 };
            *t.day_mut(ComunaId(2), d).unwrap() = DayCounts { internal_trips: 1, external_trips: 1, active_devices: (d % 2) as u64 + 1 };
        }
        let set = build_index_series(&t, &w).unwrap();
        let mut buf = Vec::new();
        write_index_daily(&mut buf, &set, &w).unwrap();
        assert_eq!(read_index_daily(buf.as_slice(), &w).unwrap(), t);
        let rows = summary_rows(&set, &QuarantineSchedule::default(), &w);
        let mut buf = Vec::new();
        write_index_summary(&mut buf, &rows).unwrap();
        assert_eq!(read_index_summary(buf.as_slice()).unwrap(), rows);
    }

    fn counts_strategy() -> impl Strategy<Value = Vec<DayCounts>> {
        prop::collection::vec(
            (0u64..500, 0u64..500, prop_oneof![1 => Just(0u64), 9 => 1u64..100])
                .prop_map(|(i, e, a)| DayCounts { internal_trips: i, external_trips: e, active_devices: a }),
            275,
        )
    }

    proptest! {
        #[test]
        fn decomposition_and_baseline_identity(counts in counts_strategy()) {
            let w = window();
            prop_assume!(w.baseline_day_indices().any(|d| counts[d].active_devices > 0 && counts[d].internal_trips > 0 && counts[d].external_trips > 0));
            let s = index_series(ComunaId(1), &counts, &w).unwrap();
            for i in s.index.iter().flatten() {
                prop_assert_eq!(i.total, i.internal + i.external);
            }
            for k in 0..3 {
                let base: Vec<f64> = w.baseline_day_indices().filter_map(|d| s.change[d].and_then(|c| c[k])).collect();
                let mean = base.iter().sum::<f64>() / base.len() as f64;
                prop_assert!(mean.abs() < 1e-12, "{}", mean);
            }
        }

        #[test]
        fn strata_match_partition_and_recompose(
            counts in counts_strategy(),
            intervals in prop::collection::vec((0i64..275, 0i64..40), 0..6),
        ) {
            let w = window();
            prop_assume!(w.baseline_day_indices().any(|d| counts[d].active_devices > 0 && counts[d].internal_trips + counts[d].external_trips > 0));
            let s = index_series(ComunaId(4), &counts, &w).unwrap();
            let schedule = QuarantineSchedule::new(intervals.iter().map(|&(a, len)| QuarantineInterval {
                comuna: ComunaId(4),
                start: w.start_date() + chrono::Days::new(a as u64),
                end: w.start_date() + chrono::Days::new((a + len) as u64),
            })).unwrap();
            let st = stratify_by_quarantine(&s, &schedule, &w);
            let (mut q, mut f) = (vec![], vec![]);
            for d in 0..w.n_days() {
                let date = w.date_of_day_index(d);
                let inside = intervals.iter().any(|&(a, len)| {
                    date >= w.start_date() + chrono::Days::new(a as u64) && date <= w.start_date() + chrono::Days::new((a + len) as u64)
                });
                if let Some(c) = s.total_change(d) {
                    if inside { q.push(c) } else { f.push(c) }
                }
            }
            prop_assert_eq!(st.days_q, q.len());
            prop_assert_eq!(st.days_free, f.len());
            let overall = -s.mean_reduction().unwrap();
            let recomposed = (st.quarantine_mean.unwrap_or(0.0) * st.days_q as f64
                + st.free_mean.unwrap_or(0.0) * st.days_free as f64)
                / (st.days_q + st.days_free) as f64;
            prop_assert!((overall - recomposed).abs() < 1e-9 * overall.abs().max(1.0));
        }

        #[test]
        fn trips_match_adjacent_scan(seq in prop::collection::vec(1u32..=7, 0..50)) {
            let r = registry();
            let ants: Vec<AntennaId> = seq.iter().map(|&a| AntennaId(a)).collect();
            let got = count_trips(&ants, &r);
            let (mut i, mut e) = (0, 0);
            for k in 1..seq.len() {
                let (a, b) = (seq[k - 1], seq[k]);
                if a == b || a == 7 || b == 7 {
                    continue;
                }
                if (a <= 3) == (b <= 3) { i += 1 } else { e += 1 }
            }
            prop_assert_eq!(got, DayTrips { internal: i, external: e });
        }
    }
}
