//! Readers for XDR event logs and the static reference tables.

mod quarantine;
mod tables;
mod xdr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use quarantine::{load_quarantines, parse_quarantines, QuarantineInterval, QuarantineSchedule};
pub use tables::{
    load_antennas, load_comunas, parse_antennas, parse_comunas, write_antennas, write_comunas,
    AntennaRegistry,
};
pub use xdr::{
    open_xdr, parse_xdr, XdrFormat, XdrReader, XdrWriter, BINARY_MAGIC, BINARY_RECORD_LEN,
    CSV_HEADER,
};

/// Share of rows that may be dropped before a run is declared failed.
pub const DEFAULT_MAX_DROP_FRACTION: f64 = 0.10;

/// Row accounting for one or more XDR sources. Merging is associative and
/// commutative, so per-file stats can be combined in any order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub events_read: u64,
    pub events_dropped_malformed: u64,
    pub events_dropped_unknown_antenna: u64,
    pub events_dropped_out_of_window: u64,
}

impl IngestStats {
    pub fn dropped(&self) -> u64 {
        self.events_dropped_malformed
            + self.events_dropped_unknown_antenna
            + self.events_dropped_out_of_window
    }

    pub fn kept(&self) -> u64 {
        self.events_read - self.dropped()
    }

    pub fn merge(&mut self, other: &IngestStats) {
        self.events_read += other.events_read;
        self.events_dropped_malformed += other.events_dropped_malformed;
        self.events_dropped_unknown_antenna += other.events_dropped_unknown_antenna;
        self.events_dropped_out_of_window += other.events_dropped_out_of_window;
    }

    pub fn drop_fraction(&self) -> f64 {
        if self.events_read == 0 {
            0.0
        } else {
            self.dropped() as f64 / self.events_read as f64
        }
    }

    /// Fails when more than `max_fraction` of the rows were dropped.
    pub fn check_drop_rate(&self, max_fraction: f64) -> Result<()> {
        let f = self.drop_fraction();
        if f > max_fraction {
            return Err(Error::ExcessiveDrops { rate: 100.0 * f, limit: 100.0 * max_fraction });
        }
        Ok(())
    }
}
