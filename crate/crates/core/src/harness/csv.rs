//! CSV output, the only plotting interface.
//!
//! Reals are written with 17 significant digits, enough for parsing a field to
//! give back the exact `f64`. Missing values are written as `NaN`.

use std::io::Write;

use super::config::Arm;
use super::episode::MetricsRow;
use crate::{Error, Result};

pub const COLUMNS: [&str; 10] = [
    "step",
    "sim_time_s",
    "true_rate",
    "estimated_rate",
    "reward",
    "epsilon",
    "eta",
    "action",
    "arm",
    "seed",
];

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("{other:?}")),
        }
    } else {
        Error::Format(e.to_string())
    }
}

/// Writes `rows`, preceded by the header when `header` is set (a sweep appends
/// later runs without one).
pub fn emit_csv<W: Write>(rows: &[MetricsRow], out: W, header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if header {
        w.write_record(COLUMNS).map_err(csv_error)?;
    }
    for r in rows {
        w.write_record([
            r.step.to_string(),
            num(r.sim_time),
            num(r.true_rate),
            num(r.estimated_rate),
            num(r.reward),
            num(r.epsilon),
            num(r.eta),
            r.action.to_string(),
            r.arm.to_string(),
            r.seed.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`emit_csv`] with a header.
pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?.clone();
    if header.is_empty() {
        return Err(Error::Format("empty CSV".into()));
    }
    if header.iter().ne(COLUMNS) {
        return Err(Error::Format(format!("unexpected CSV header {header:?}")));
    }
    reader
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let f = rec.map_err(csv_error)?;
            let bad = || Error::Format(format!("CSV line {}: {f:?}", i + 2));
            let x = |j: usize| f[j].parse::<f64>().map_err(|_| bad());
            Ok(MetricsRow {
                step: f[0].parse().map_err(|_| bad())?,
                sim_time: x(1)?,
                true_rate: x(2)?,
                estimated_rate: x(3)?,
                reward: x(4)?,
                epsilon: x(5)?,
                eta: x(6)?,
                action: f[7].parse().map_err(|_| bad())?,
                arm: f[8].parse::<Arm>().map_err(|_| bad())?,
                seed: f[9].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
