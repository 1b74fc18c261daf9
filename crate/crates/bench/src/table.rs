//! CSV form of the result table.

use std::io::{Read, Write};

use crate::error::{BenchError, Result};
use crate::experiment::{Algo, ResultRow};

pub const HEADER: [&str; 8] = ["snr_db", "channel_id", "restart_id", "algo", "iter", "wsr", "power", "wall_ms"];

/// Floats use the shortest representation that round-trips exactly.
pub fn write_rows<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.snr_db.to_string(),
            r.channel_id.to_string(),
            r.restart_id.to_string(),
            r.algo.to_string(),
            r.iter.to_string(),
            r.wsr.to_string(),
            r.power.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush().map_err(|source| BenchError::Io {
        path: "<csv output>".into(),
        source,
    })?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(BenchError::Usage(format!(
            "unexpected CSV header '{}', expected '{}'",
            header.iter().collect::<Vec<_>>().join(","),
            HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |field: &str| BenchError::Usage(format!("data row {}: invalid {field} '{}'", line + 1, &rec[HEADER.iter().position(|h| *h == field).unwrap_or(0)]));
        let f = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(HEADER[i]));
        let u = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(HEADER[i]));
        rows.push(ResultRow {
            snr_db: f(0)?,
            channel_id: u(1)?,
            restart_id: u(2)?,
            algo: rec[3].parse::<Algo>()?,
            iter: u(4)?,
            wsr: f(5)?,
            power: f(6)?,
            wall_ms: f(7)?,
        });
    }
    Ok(rows)
}
