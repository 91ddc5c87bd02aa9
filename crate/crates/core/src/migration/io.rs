use std::io::{BufRead, Write};

use super::{MigrationRecord, OdMatrix, PctMatrix};
use crate::error::{Error, Result};

pub const RECORDS_CSV_HEADER: &str =
    "device_id,origin_comuna,destination_comuna,origin_region,destination_region,migrated";

pub fn write_records_csv<W: Write>(mut out: W, records: &[MigrationRecord]) -> Result<()> {
    writeln!(out, "{RECORDS_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.device, r.origin_comuna, r.destination_comuna, r.origin_region, r.destination_region, r.migrated
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records_csv<R: BufRead>(source: R) -> Result<Vec<MigrationRecord>> {
    let mut reader = csv::Reader::from_reader(source);
    let header = reader.headers()?;
    if header.iter().ne(RECORDS_CSV_HEADER.split(',')) {
        return Err(Error::schema(format!("migration records header must be `{RECORDS_CSV_HEADER}`")));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let num = |i: usize| -> Result<u64> {
            row[i].parse().map_err(|_| Error::schema(format!("bad number `{}` in migration records", &row[i])))
        };
        let migrated = match &row[5] {
            "true" => true,
            "false" => false,
            other => return Err(Error::schema(format!("bad migrated flag `{other}`"))),
        };
        let id32 = |i: usize| -> Result<u32> {
            u32::try_from(num(i)?).map_err(|_| Error::schema(format!("id `{}` out of range", &row[i])))
        };
        let r = MigrationRecord {
            device: num(0)?.into(),
            origin_comuna: id32(1)?.into(),
            destination_comuna: id32(2)?.into(),
            origin_region: id32(3)?.into(),
            destination_region: id32(4)?.into(),
            migrated,
        };
        if r.migrated != (r.origin_region != r.destination_region) {
            return Err(Error::validation(format!("device {} has an inconsistent migrated flag", r.device)));
        }
        out.push(r);
    }
    Ok(out)
}

/// Appends `direction,level,origin,destination,count,origin_base` rows for
/// the nonzero cells, then zero-count rows for origins without migrants so
/// every base is recorded.
pub fn write_od_csv<W: Write>(mut out: W, matrices: &[&OdMatrix]) -> Result<()> {
    writeln!(out, "direction,level,origin,destination,count,origin_base")?;
    for m in matrices {
        let (dir, lvl) = (m.direction.as_str(), m.level.as_str());
        for (o, d, c) in m.cells() {
            writeln!(out, "{dir},{lvl},{o},{d},{c},{}", m.base(o))?;
        }
        for (o, base) in m.bases() {
            if m.row_total(o) == 0 {
                writeln!(out, "{dir},{lvl},{o},,0,{base}")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// `label,row,col,value` for every cell of each labelled matrix.
pub fn write_pct_csv<W: Write>(mut out: W, matrices: &[(&str, &PctMatrix)]) -> Result<()> {
    writeln!(out, "matrix,origin,destination,pct")?;
    for (label, m) in matrices {
        for (r, c, v) in m.cells() {
            writeln!(out, "{label},{r},{c},{v}")?;
        }
    }
    out.flush()?;
    Ok(())
}
