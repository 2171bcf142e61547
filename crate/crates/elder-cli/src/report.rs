//! CSV output and hashing helpers shared by the subcommands.
//!
//! Every value written to disk is formatted deterministically (shortest
//! round-trip float formatting, no timestamps), so reruns with the same
//! config and seed produce byte-identical files.

use elder::{Error, Result};
use std::fs::File;
use std::path::Path;

pub fn map_csv(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format(format!("csv: {other:?}")),
    }
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path)?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_row<S: AsRef<[u8]>>(w: &mut csv::Writer<File>, row: &[S]) -> Result<()> {
    w.write_record(row).map_err(map_csv)
}

pub fn finish(mut w: csv::Writer<File>) -> Result<()> {
    w.flush().map_err(Error::Io)
}

/// Shortest round-trip formatting; `inf` for unbounded metrics.
pub fn fmt_f(v: f64) -> String {
    format!("{v}")
}

/// FNV-1a 64-bit hash, used to fingerprint generated files in manifests.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
