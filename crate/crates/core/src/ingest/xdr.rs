//! XDR event log encodings.
//!
//! CSV: header `device_id,timestamp,antenna_id`, unsigned decimal fields, LF
//! line endings.
//!
//! Binary: the 8-byte magic `XDRBIN01` followed by 16-byte little-endian
//! records `(u64 device, u32 seconds since window start, u32 antenna)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AntennaRegistry, IngestStats};
use crate::error::{Error, Result};
use crate::model::{AntennaId, DeviceId, XdrEvent};
use crate::window::StudyWindow;

pub const CSV_HEADER: &str = "device_id,timestamp,antenna_id";
pub const BINARY_MAGIC: &[u8; 8] = b"XDRBIN01";
pub const BINARY_RECORD_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XdrFormat {
    Csv,
    #[serde(rename = "bin")]
    Binary,
}

impl XdrFormat {
    pub fn extension(self) -> &'static str {
        match self {
            XdrFormat::Csv => "csv",
            XdrFormat::Binary => "bin",
        }
    }
}

impl std::str::FromStr for XdrFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(XdrFormat::Csv),
            "bin" | "binary" => Ok(XdrFormat::Binary),
            other => Err(Error::validation(format!("unknown XDR format `{other}`"))),
        }
    }
}

/// Streaming XDR reader. Yields valid events in file order and counts every
/// dropped row in [`IngestStats`]; only I/O failures surface as errors.
pub struct XdrReader<'r, R> {
    inner: R,
    format: XdrFormat,
    registry: &'r AntennaRegistry,
    start: i64,
    end: i64,
    stats: IngestStats,
    line: Vec<u8>,
    done: bool,
}

/// Opens `source`, detecting the encoding from its first bytes.
pub fn parse_xdr<'r, R: BufRead>(
    mut source: R,
    window: &StudyWindow,
    registry: &'r AntennaRegistry,
) -> Result<XdrReader<'r, R>> {
    let format = detect_format(&mut source)?;
    let mut line = Vec::with_capacity(64);
    if format == XdrFormat::Csv {
        source.read_until(b'\n', &mut line)?;
        let header = line.strip_suffix(b"\n").unwrap_or(&line);
        if header != CSV_HEADER.as_bytes() {
            return Err(Error::schema(format!(
                "XDR header must be `{CSV_HEADER}`, found `{}`",
                String::from_utf8_lossy(header)
            )));
        }
    }
    Ok(XdrReader {
        inner: source,
        format,
        registry,
        start: window.start_utc(),
        end: window.end_utc(),
        stats: IngestStats::default(),
        line,
        done: false,
    })
}

/// Opens an XDR file for streaming.
pub fn open_xdr<'r>(
    path: &Path,
    window: &StudyWindow,
    registry: &'r AntennaRegistry,
) -> Result<XdrReader<'r, BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_xdr(BufReader::with_capacity(1 << 20, file), window, registry)
}

fn detect_format<R: BufRead>(source: &mut R) -> Result<XdrFormat> {
    let mut prefix = [0u8; 8];
    let mut got = 0;
    // fill_buf may return fewer bytes than the magic at a buffer edge
    while got < prefix.len() {
        let buf = source.fill_buf()?;
        if buf.is_empty() {
            break;
        }
        let take = buf.len().min(prefix.len() - got);
        if buf[..take] != BINARY_MAGIC[got..got + take] {
            // Not binary; nothing consumed beyond what matched the magic, and a
            // CSV header never shares a prefix with it.
            if got == 0 {
                return Ok(XdrFormat::Csv);
            }
            return Err(Error::schema("truncated or corrupt binary XDR magic"));
        }
        prefix[got..got + take].copy_from_slice(&buf[..take]);
        got += take;
        source.consume(take);
    }
    if got == prefix.len() {
        Ok(XdrFormat::Binary)
    } else if got == 0 {
        // empty source: treat as CSV so the header check reports it
        Ok(XdrFormat::Csv)
    } else {
        Err(Error::schema("truncated binary XDR magic"))
    }
}

fn parse_digits(field: &[u8]) -> Option<u64> {
    if field.is_empty() || field.len() > 20 {
        return None;
    }
    let mut v: u64 = 0;
    for &b in field {
        let d = b.wrapping_sub(b'0');
        if d > 9 {
            return None;
        }
        v = v.checked_mul(10)?.checked_add(u64::from(d))?;
    }
    Some(v)
}

/// Splits one CSV data row into its three numeric fields.
fn parse_row(line: &[u8]) -> Option<(u64, u64, u64)> {
    let mut fields = line.split(|&b| b == b',');
    let device = parse_digits(fields.next()?)?;
    let ts = parse_digits(fields.next()?)?;
    let antenna = parse_digits(fields.next()?)?;
    if fields.next().is_some() {
        return None;
    }
    Some((device, ts, antenna))
}

impl<R: BufRead> XdrReader<'_, R> {
    pub fn format(&self) -> XdrFormat {
        self.format
    }

    /// Counters for everything consumed so far.
    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    fn accept(&mut self, device: u64, ts: i64, antenna: u64) -> Option<XdrEvent> {
        let Ok(antenna) = u32::try_from(antenna) else {
            self.stats.events_dropped_malformed += 1;
            return None;
        };
        if ts < self.start || ts >= self.end {
            self.stats.events_dropped_out_of_window += 1;
            return None;
        }
        let antenna = AntennaId(antenna);
        if !self.registry.contains(antenna) {
            self.stats.events_dropped_unknown_antenna += 1;
            return None;
        }
        Some(XdrEvent { device: DeviceId(device), timestamp: ts, antenna })
    }

    fn next_csv(&mut self) -> Result<Option<XdrEvent>> {
        loop {
            self.line.clear();
            if self.inner.read_until(b'\n', &mut self.line)? == 0 {
                return Ok(None);
            }
            self.stats.events_read += 1;
            let row = self.line.strip_suffix(b"\n").unwrap_or(&self.line);
            let Some((device, ts, antenna)) = parse_row(row) else {
                self.stats.events_dropped_malformed += 1;
                continue;
            };
            let Ok(ts) = i64::try_from(ts) else {
                self.stats.events_dropped_out_of_window += 1;
                continue;
            };
            if let Some(ev) = self.accept(device, ts, antenna) {
                return Ok(Some(ev));
            }
        }
    }

    fn next_binary(&mut self) -> Result<Option<XdrEvent>> {
        let mut rec = [0u8; BINARY_RECORD_LEN];
        loop {
            let mut filled = 0;
            while filled < BINARY_RECORD_LEN {
                let n = match self.inner.read(&mut rec[filled..]) {
                    Ok(n) => n,
                    Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                    Err(e) => return Err(e.into()),
                };
                if n == 0 {
                    break;
                }
                filled += n;
            }
            if filled == 0 {
                return Ok(None);
            }
            self.stats.events_read += 1;
            if filled < BINARY_RECORD_LEN {
                self.stats.events_dropped_malformed += 1;
                return Ok(None);
            }
            let device = u64::from_le_bytes(rec[0..8].try_into().unwrap());
            let offset = u32::from_le_bytes(rec[8..12].try_into().unwrap());
            let antenna = u32::from_le_bytes(rec[12..16].try_into().unwrap());
            let ts = self.start + i64::from(offset);
            if let Some(ev) = self.accept(device, ts, u64::from(antenna)) {
                return Ok(Some(ev));
            }
        }
    }
}

impl<R: BufRead> Iterator for XdrReader<'_, R> {
    type Item = Result<XdrEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let r = match self.format {
            XdrFormat::Csv => self.next_csv(),
            XdrFormat::Binary => self.next_binary(),
        };
        match r {
            Ok(Some(ev)) => Some(Ok(ev)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Writes events in either encoding.
pub struct XdrWriter<W: Write> {
    out: W,
    format: XdrFormat,
    start: i64,
    end: i64,
    buf: Vec<u8>,
}

impl XdrWriter<BufWriter<File>> {
    pub fn create(path: &Path, format: XdrFormat, window: &StudyWindow) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        XdrWriter::new(BufWriter::with_capacity(1 << 20, file), format, window)
    }
}

impl<W: Write> XdrWriter<W> {
    pub fn new(mut out: W, format: XdrFormat, window: &StudyWindow) -> Result<Self> {
        match format {
            XdrFormat::Csv => writeln!(out, "{CSV_HEADER}")?,
            XdrFormat::Binary => out.write_all(BINARY_MAGIC)?,
        }
        Ok(XdrWriter {
            out,
            format,
            start: window.start_utc(),
            end: window.end_utc(),
            buf: Vec::with_capacity(64),
        })
    }

    pub fn write(&mut self, ev: &XdrEvent) -> Result<()> {
        match self.format {
            XdrFormat::Csv => {
                if ev.timestamp < 0 {
                    return Err(Error::validation("negative timestamp"));
                }
                self.buf.clear();
                write!(self.buf, "{},{},{}\n", ev.device.0, ev.timestamp, ev.antenna.0)?;
                self.out.write_all(&self.buf)?;
            }
            XdrFormat::Binary => {
                if ev.timestamp < self.start || ev.timestamp >= self.end {
                    return Err(Error::validation(format!(
                        "timestamp {} cannot be encoded outside the study window",
                        ev.timestamp
                    )));
                }
                let offset = (ev.timestamp - self.start) as u32;
                let mut rec = [0u8; BINARY_RECORD_LEN];
                rec[0..8].copy_from_slice(&ev.device.0.to_le_bytes());
                rec[8..12].copy_from_slice(&offset.to_le_bytes());
                rec[12..16].copy_from_slice(&ev.antenna.0.to_le_bytes());
                self.out.write_all(&rec)?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}
