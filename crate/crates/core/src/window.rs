//! The March–November study window and its week calendar.
//!
//! Timestamps are UTC epoch seconds. A single fixed offset converts them to
//! local time; there is no daylight-saving model. Weeks are Monday-aligned in
//! local time and are numbered from the Monday on or before March 1st, so the
//! first week may be partial.

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;
const SECONDS_PER_HOUR: i64 = 3_600;

/// Night hours are `[NIGHT_START_HOUR, 24) ∪ [0, NIGHT_END_HOUR)` in local time.
pub const NIGHT_START_HOUR: i64 = 22;
pub const NIGHT_END_HOUR: i64 = 7;

/// Default offset for continental Chile standard time.
pub const DEFAULT_TZ_OFFSET_HOURS: i32 = -4;

/// Serializable parameters from which a [`StudyWindow`] is rebuilt.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowParams {
    pub year: i32,
    pub tz_offset_hours: i32,
    /// Monday of the baseline week, ISO-8601.
    pub baseline_week_start: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StudyWindow {
    year: i32,
    tz_offset_hours: i32,
    /// Epoch day numbers (local calendar) of March 1st and November 30th.
    start_day: i64,
    end_day: i64,
    /// Epoch day number of the Monday that opens week 0.
    first_monday: i64,
    baseline_week: usize,
    november_weeks: [usize; 4],
}

/// Days since 1970-01-01 for a calendar date.
pub fn epoch_day(date: NaiveDate) -> i64 {
    i64::from(date.num_days_from_ce()) - 719_163
}

/// Calendar date of an epoch day number.
pub fn date_of_epoch_day(day: i64) -> NaiveDate {
    NaiveDate::from_num_days_from_ce_opt((day + 719_163) as i32).expect("day within chrono range")
}

/// Monday = 0 … Sunday = 6. 1970-01-01 was a Thursday.
pub fn weekday_index(day: i64) -> i64 {
    (day + 3).rem_euclid(7)
}

impl StudyWindow {
    /// Window for `year` with the default baseline week (the second
    /// Monday-aligned week whose Monday falls in March).
    pub fn new(year: i32, tz_offset_hours: i32) -> Result<Self> {
        if !(-14..=14).contains(&tz_offset_hours) {
            return Err(Error::validation(format!(
                "tz offset {tz_offset_hours} h outside [-14, 14]"
            )));
        }
        let start = NaiveDate::from_ymd_opt(year, 3, 1)
            .ok_or_else(|| Error::validation(format!("invalid year {year}")))?;
        let end = NaiveDate::from_ymd_opt(year, 11, 30).expect("November 30th exists");
        let start_day = epoch_day(start);
        let end_day = epoch_day(end);
        let first_monday = start_day - weekday_index(start_day);

        let first_march_monday = start_day + (7 - weekday_index(start_day)) % 7;
        let baseline_week = ((first_march_monday + 7 - first_monday) / 7) as usize;

        let mut window = StudyWindow {
            year,
            tz_offset_hours,
            start_day,
            end_day,
            first_monday,
            baseline_week,
            november_weeks: [0; 4],
        };
        window.november_weeks = window.select_november_weeks();
        Ok(window)
    }

    pub fn from_params(params: &WindowParams) -> Result<Self> {
        let monday = NaiveDate::parse_from_str(&params.baseline_week_start, "%Y-%m-%d")
            .map_err(|e| Error::validation(format!("baseline week start: {e}")))?;
        StudyWindow::new(params.year, params.tz_offset_hours)?.with_baseline_week(monday)
    }

    pub fn params(&self) -> WindowParams {
        WindowParams {
            year: self.year,
            tz_offset_hours: self.tz_offset_hours,
            baseline_week_start: self.week_start(self.baseline_week).to_string(),
        }
    }

    /// Overrides the baseline week. `monday` must be a Monday whose week lies
    /// entirely inside the window.
    pub fn with_baseline_week(mut self, monday: NaiveDate) -> Result<Self> {
        if monday.weekday() != Weekday::Mon {
            return Err(Error::validation(format!("baseline week start {monday} is not a Monday")));
        }
        let day = epoch_day(monday);
        if day < self.start_day || day + 6 > self.end_day {
            return Err(Error::validation(format!(
                "baseline week {monday} is not inside the study window"
            )));
        }
        self.baseline_week = ((day - self.first_monday) / 7) as usize;
        Ok(self)
    }

    /// The four Monday-aligned weeks with the largest overlap with November,
    /// in calendar order. When November holds four full weeks these are exactly
    /// the weeks fully inside it.
    fn select_november_weeks(&self) -> [usize; 4] {
        let nov1 = epoch_day(NaiveDate::from_ymd_opt(self.year, 11, 1).unwrap());
        let first = ((nov1 - self.first_monday) / 7) as usize;
        let mut candidates: Vec<(i64, usize)> = (first..self.n_weeks())
            .map(|w| {
                let monday = self.first_monday + 7 * w as i64;
                let lo = monday.max(nov1);
                let hi = (monday + 6).min(self.end_day);
                (hi - lo + 1, w)
            })
            .collect();
        candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut weeks = [0; 4];
        for (slot, (_, w)) in weeks.iter_mut().zip(candidates.iter()) {
            *slot = *w;
        }
        weeks.sort_unstable();
        weeks
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn tz_offset_hours(&self) -> i32 {
        self.tz_offset_hours
    }

    fn tz_seconds(&self) -> i64 {
        i64::from(self.tz_offset_hours) * SECONDS_PER_HOUR
    }

    pub fn start_date(&self) -> NaiveDate {
        date_of_epoch_day(self.start_day)
    }

    pub fn end_date(&self) -> NaiveDate {
        date_of_epoch_day(self.end_day)
    }

    /// UTC instant of local midnight opening March 1st.
    pub fn start_utc(&self) -> i64 {
        self.start_day * SECONDS_PER_DAY - self.tz_seconds()
    }

    /// UTC instant of local midnight closing November 30th (exclusive bound).
    pub fn end_utc(&self) -> i64 {
        (self.end_day + 1) * SECONDS_PER_DAY - self.tz_seconds()
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.start_utc() && ts < self.end_utc()
    }

    pub fn n_days(&self) -> usize {
        (self.end_day - self.start_day + 1) as usize
    }

    /// Local epoch day number of a UTC timestamp.
    pub fn local_day(&self, ts: i64) -> i64 {
        (ts + self.tz_seconds()).div_euclid(SECONDS_PER_DAY)
    }

    /// Seconds since local midnight.
    pub fn local_second_of_day(&self, ts: i64) -> i64 {
        (ts + self.tz_seconds()).rem_euclid(SECONDS_PER_DAY)
    }

    /// Index of the local day within the window, `None` outside it.
    pub fn day_index(&self, ts: i64) -> Option<usize> {
        let d = self.local_day(ts);
        (self.start_day..=self.end_day)
            .contains(&d)
            .then(|| (d - self.start_day) as usize)
    }

    pub fn date_of_day_index(&self, index: usize) -> NaiveDate {
        date_of_epoch_day(self.start_day + index as i64)
    }

    pub fn day_index_of_date(&self, date: NaiveDate) -> Option<usize> {
        let d = epoch_day(date);
        (self.start_day..=self.end_day)
            .contains(&d)
            .then(|| (d - self.start_day) as usize)
    }

    pub fn n_weeks(&self) -> usize {
        ((self.end_day - self.first_monday) / 7 + 1) as usize
    }

    /// Week index of a local epoch day; `None` before week 0 or after the window.
    pub fn week_of_epoch_day(&self, day: i64) -> Option<usize> {
        if day < self.first_monday || day > self.end_day {
            return None;
        }
        Some(((day - self.first_monday) / 7) as usize)
    }

    pub fn week_of_day_index(&self, index: usize) -> usize {
        ((self.start_day + index as i64 - self.first_monday) / 7) as usize
    }

    /// Monday opening week `week`.
    pub fn week_start(&self, week: usize) -> NaiveDate {
        date_of_epoch_day(self.first_monday + 7 * week as i64)
    }

    pub fn week_of_start_date(&self, monday: NaiveDate) -> Option<usize> {
        let d = epoch_day(monday);
        if weekday_index(d) != 0 {
            return None;
        }
        self.week_of_epoch_day(d)
    }

    pub fn baseline_week(&self) -> usize {
        self.baseline_week
    }

    /// Day indices (into the window) of the seven baseline days.
    pub fn baseline_day_indices(&self) -> std::ops::Range<usize> {
        let monday = self.first_monday + 7 * self.baseline_week as i64;
        let first = (monday - self.start_day) as usize;
        first..first + 7
    }

    pub fn november_weeks(&self) -> [usize; 4] {
        self.november_weeks
    }

    /// Epoch day on which the night containing `ts` began, or `None` when `ts`
    /// falls in daytime hours. Hours after midnight belong to the previous
    /// day's night.
    pub fn night_start_day(&self, ts: i64) -> Option<i64> {
        let hour = self.local_second_of_day(ts) / SECONDS_PER_HOUR;
        let day = self.local_day(ts);
        if hour >= NIGHT_START_HOUR {
            Some(day)
        } else if hour < NIGHT_END_HOUR {
            Some(day - 1)
        } else {
            None
        }
    }

    /// Week of a weekday night event: the night must begin Monday through
    /// Friday. `None` for daytime or weekend-night events.
    pub fn weeknight_week(&self, ts: i64) -> Option<usize> {
        let night = self.night_start_day(ts)?;
        if weekday_index(night) > 4 {
            return None;
        }
        self.week_of_epoch_day(night)
    }
}
