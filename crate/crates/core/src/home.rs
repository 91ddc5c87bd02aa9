//! Weekly home-comuna inference from weekday night-time events.
//!
//! A device's home in a given week is the comuna of the antenna it used most
//! during weekday nights (22:00–07:00 local, post-midnight hours attributed to
//! the previous evening). Weeks with fewer than `min_events` such events stay
//! unresolved.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::AntennaRegistry;
use crate::mode::mode_with_tiebreak;
use crate::model::{AntennaId, ComunaId, DeviceId, XdrEvent};
use crate::window::StudyWindow;

pub const DEFAULT_MIN_NIGHT_EVENTS: u32 = 3;

/// A mode needs at least this many resolved November weeks.
pub const MIN_NOVEMBER_WEEKS: usize = 2;

pub const HOMES_CSV_HEADER: &str = "device_id,week_start,comuna_id";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HomeSeries {
    pub device: DeviceId,
    /// Inferred home per week of the study window, indexed by week.
    pub weekly_home: Vec<Option<ComunaId>>,
    pub baseline_home: Option<ComunaId>,
    pub november_home: Option<ComunaId>,
}

impl HomeSeries {
    /// Derives the baseline and November homes from a weekly series.
    pub fn from_weekly(device: DeviceId, weekly_home: Vec<Option<ComunaId>>, window: &StudyWindow) -> Self {
        debug_assert_eq!(weekly_home.len(), window.n_weeks());
        let baseline_home = weekly_home.get(window.baseline_week()).copied().flatten();
        let november: Vec<ComunaId> = window
            .november_weeks()
            .iter()
            .filter_map(|&w| weekly_home.get(w).copied().flatten())
            .collect();
        let november_home = if november.len() >= MIN_NOVEMBER_WEEKS {
            mode_with_tiebreak(&november).ok()
        } else {
            None
        };
        HomeSeries { device, weekly_home, baseline_home, november_home }
    }

    pub fn home_in_week(&self, week: usize) -> Option<ComunaId> {
        self.weekly_home.get(week).copied().flatten()
    }

    pub fn resolved_weeks(&self) -> usize {
        self.weekly_home.iter().filter(|w| w.is_some()).count()
    }
}

/// Keeps weekday-night events.
pub fn night_weekday_filter<'w, I>(events: I, window: &'w StudyWindow) -> impl Iterator<Item = XdrEvent> + 'w
where
    I: IntoIterator<Item = XdrEvent>,
    I::IntoIter: 'w,
{
    events.into_iter().filter(move |e| window.weeknight_week(e.timestamp).is_some())
}

/// Home from per-antenna night counts: the most used antenna (ties to the
/// smallest id) decides, provided the total reaches `min_events`.
pub fn home_from_counts(
    counts: &[(AntennaId, u32)],
    registry: &AntennaRegistry,
    min_events: u32,
) -> Option<ComunaId> {
    let total: u64 = counts.iter().map(|&(_, c)| u64::from(c)).sum();
    if total < u64::from(min_events) || total == 0 {
        return None;
    }
    let (antenna, _) = counts
        .iter()
        .copied()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))?;
    registry.comuna_of(antenna)
}

/// Home comuna for the night events of one device in one week.
pub fn weekly_home(
    night_events: &[XdrEvent],
    registry: &AntennaRegistry,
    min_events: u32,
) -> Option<ComunaId> {
    let mut counts: Vec<(AntennaId, u32)> = Vec::new();
    for e in night_events {
        match counts.iter_mut().find(|(a, _)| *a == e.antenna) {
            Some(slot) => slot.1 += 1,
            None => counts.push((e.antenna, 1)),
        }
    }
    home_from_counts(&counts, registry, min_events)
}

/// Full weekly series for the events of one device.
pub fn build_home_series(
    device_events: &[XdrEvent],
    window: &StudyWindow,
    registry: &AntennaRegistry,
    min_events: u32,
) -> HomeSeries {
    let device = device_events.first().map(|e| e.device).unwrap_or(DeviceId(0));
    let mut nights = DeviceNights::default();
    for e in device_events {
        debug_assert_eq!(e.device, device);
        if let Some(week) = window.weeknight_week(e.timestamp) {
            nights.add(week as u32, e.antenna, 1);
        }
    }
    nights.into_series(device, window, registry, min_events)
}

/// Night counts of one device keyed by (week, antenna).
#[derive(Clone, Debug, Default)]
struct DeviceNights {
    cells: Vec<(u32, AntennaId, u32)>,
}

impl DeviceNights {
    #[inline]
    fn add(&mut self, week: u32, antenna: AntennaId, n: u32) {
        // time-ordered input hits the most recent cell first
        match self.cells.iter_mut().rev().find(|c| c.0 == week && c.1 == antenna) {
            Some(c) => c.2 += n,
            None => self.cells.push((week, antenna, n)),
        }
    }

    fn into_series(
        mut self,
        device: DeviceId,
        window: &StudyWindow,
        registry: &AntennaRegistry,
        min_events: u32,
    ) -> HomeSeries {
        self.cells.sort_unstable();
        let mut weekly = vec![None; window.n_weeks()];
        let mut counts = Vec::new();
        for group in self.cells.chunk_by(|a, b| a.0 == b.0) {
            counts.clear();
            counts.extend(group.iter().map(|&(_, a, c)| (a, c)));
            weekly[group[0].0 as usize] = home_from_counts(&counts, registry, min_events);
        }
        HomeSeries::from_weekly(device, weekly, window)
    }
}

/// Streaming per-device aggregation of weekday-night antenna counts.
///
/// Memory grows with devices × weeks × distinct night antennas, not with the
/// number of events. Accumulators built over disjoint inputs can be merged in
/// any order with identical results.
#[derive(Clone, Debug)]
pub struct HomeAccumulator {
    window: StudyWindow,
    devices: HashMap<DeviceId, DeviceNights>,
    night_events: u64,
}

impl HomeAccumulator {
    pub fn new(window: StudyWindow) -> Self {
        HomeAccumulator { window, devices: HashMap::new(), night_events: 0 }
    }

    /// Records `event` if it is a weekday-night event; returns whether it was.
    #[inline]
    pub fn observe(&mut self, event: &XdrEvent) -> bool {
        let Some(week) = self.window.weeknight_week(event.timestamp) else {
            // register the device so that fully unresolved devices are still counted
            self.devices.entry(event.device).or_default();
            return false;
        };
        self.night_events += 1;
        self.devices.entry(event.device).or_default().add(week as u32, event.antenna, 1);
        true
    }

    pub fn merge(&mut self, other: HomeAccumulator) {
        self.night_events += other.night_events;
        for (device, nights) in other.devices {
            let slot = self.devices.entry(device).or_default();
            for (w, a, c) in nights.cells {
                slot.add(w, a, c);
            }
        }
    }

    pub fn night_events(&self) -> u64 {
        self.night_events
    }

    pub fn device_count(&self) -> usize {
        self.devices.len()
    }

    /// Resolves every device's series, ordered by device id.
    pub fn finish(self, registry: &AntennaRegistry, min_events: u32) -> Vec<HomeSeries> {
        let window = self.window;
        let mut devices: Vec<(DeviceId, DeviceNights)> = self.devices.into_iter().collect();
        devices.par_sort_unstable_by_key(|(d, _)| *d);
        devices
            .into_par_iter()
            .map(|(d, nights)| nights.into_series(d, &window, registry, min_events))
            .collect()
    }
}

/// Writes resolved device-weeks as `device_id,week_start,comuna_id`.
pub fn write_homes_csv<W: Write>(mut out: W, series: &[HomeSeries], window: &StudyWindow) -> Result<()> {
    writeln!(out, "{HOMES_CSV_HEADER}")?;
    let starts: Vec<String> = (0..window.n_weeks()).map(|w| window.week_start(w).to_string()).collect();
    for s in series {
        for (w, home) in s.weekly_home.iter().enumerate() {
            if let Some(c) = home {
                writeln!(out, "{},{},{}", s.device, starts[w], c)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads the audit CSV back into series (devices in ascending id order).
pub fn read_homes_csv<R: BufRead>(source: R, window: &StudyWindow) -> Result<Vec<HomeSeries>> {
    let mut lines = source.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end() != HOMES_CSV_HEADER {
        return Err(Error::schema(format!("homes header must be `{HOMES_CSV_HEADER}`")));
    }
    let mut weeks_by_start: HashMap<String, usize> = HashMap::new();
    for w in 0..window.n_weeks() {
        weeks_by_start.insert(window.week_start(w).to_string(), w);
    }
    let mut by_device: HashMap<DeviceId, Vec<Option<ComunaId>>> = HashMap::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = || Error::schema(format!("homes row {}: `{line}`", n + 2));
        let mut f = line.split(',');
        let (Some(d), Some(w), Some(c), None) = (f.next(), f.next(), f.next(), f.next()) else {
            return Err(bad());
        };
        let device = DeviceId(d.parse().map_err(|_| bad())?);
        let week = *weeks_by_start.get(w).ok_or_else(|| {
            Error::validation(format!("week {w} is not a week start of the {} window", window.year()))
        })?;
        let comuna = ComunaId(c.parse().map_err(|_| bad())?);
        by_device.entry(device).or_insert_with(|| vec![None; window.n_weeks()])[week] = Some(comuna);
    }
    let mut out: Vec<HomeSeries> = by_device
        .into_iter()
        .map(|(d, weekly)| HomeSeries::from_weekly(d, weekly, window))
        .collect();
    out.sort_by_key(|s| s.device);
    Ok(out)
}
