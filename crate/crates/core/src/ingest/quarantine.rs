use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::ComunaId;

/// Inclusive quarantine period of one comuna.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct QuarantineInterval {
    pub comuna: ComunaId,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

/// Per-comuna sorted, non-overlapping quarantine intervals.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QuarantineSchedule {
    by_comuna: BTreeMap<ComunaId, Vec<(NaiveDate, NaiveDate)>>,
    merged_overlaps: usize,
}

impl QuarantineSchedule {
    /// Validates and normalizes `intervals`. Overlapping intervals of one
    /// comuna are merged and counted; abutting ones are kept apart.
    pub fn new(intervals: impl IntoIterator<Item = QuarantineInterval>) -> Result<Self> {
        let mut raw: BTreeMap<ComunaId, Vec<(NaiveDate, NaiveDate)>> = BTreeMap::new();
        for iv in intervals {
            if iv.end < iv.start {
                return Err(Error::validation(format!(
                    "quarantine for comuna {} ends ({}) before it starts ({})",
                    iv.comuna, iv.end, iv.start
                )));
            }
            raw.entry(iv.comuna).or_default().push((iv.start, iv.end));
        }
        let mut merged_overlaps = 0;
        for list in raw.values_mut() {
            list.sort_unstable();
            let mut out: Vec<(NaiveDate, NaiveDate)> = Vec::with_capacity(list.len());
            for &(s, e) in list.iter() {
                match out.last_mut() {
                    Some(last) if s <= last.1 => {
                        merged_overlaps += 1;
                        last.1 = last.1.max(e);
                    }
                    _ => out.push((s, e)),
                }
            }
            *list = out;
        }
        Ok(QuarantineSchedule { by_comuna: raw, merged_overlaps })
    }

    /// Number of overlapping intervals that were folded into a neighbour.
    pub fn merged_overlaps(&self) -> usize {
        self.merged_overlaps
    }

    /// Binary search over the comuna's intervals.
    pub fn in_quarantine(&self, comuna: ComunaId, date: NaiveDate) -> bool {
        let Some(list) = self.by_comuna.get(&comuna) else {
            return false;
        };
        let idx = list.partition_point(|&(s, _)| s <= date);
        idx > 0 && list[idx - 1].1 >= date
    }

    pub fn intervals(&self) -> impl Iterator<Item = QuarantineInterval> + '_ {
        self.by_comuna.iter().flat_map(|(&comuna, list)| {
            list.iter().map(move |&(start, end)| QuarantineInterval { comuna, start, end })
        })
    }

    pub fn is_empty(&self) -> bool {
        self.by_comuna.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "comuna_id,start_date,end_date")?;
        for iv in self.intervals() {
            writeln!(out, "{},{},{}", iv.comuna, iv.start, iv.end)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Deserialize)]
struct Row {
    comuna_id: u32,
    start_date: String,
    end_date: String,
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| Error::schema(format!("bad ISO-8601 date `{s}`: {e}")))
}

pub fn parse_quarantines<R: Read>(source: R) -> Result<QuarantineSchedule> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::Fields).from_reader(source);
    let header = reader.headers()?;
    if header.iter().ne(["comuna_id", "start_date", "end_date"]) {
        return Err(Error::schema("quarantine header must be `comuna_id,start_date,end_date`"));
    }
    let mut intervals = Vec::new();
    for row in reader.deserialize() {
        let row: Row = row?;
        intervals.push(QuarantineInterval {
            comuna: ComunaId(row.comuna_id),
            start: parse_date(&row.start_date)?,
            end: parse_date(&row.end_date)?,
        });
    }
    QuarantineSchedule::new(intervals)
}

pub fn load_quarantines(path: &Path) -> Result<QuarantineSchedule> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_quarantines(file)
}
