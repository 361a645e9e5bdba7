//! CSV rows. Everything is rendered into memory first, so a failed run never
//! leaves a partial file behind.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

/// One measurement. Column order is the field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub method: String,
    pub seed: u64,
    pub nfe: usize,
    pub tv: f64,
    pub hellinger: Option<f64>,
    pub wallclock_ns: u64,
}

pub const CSV_HEADER: &str = "method,seed,nfe,tv,hellinger,wallclock_ns";

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Io(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| CliError::Io(format!("csv: {e}")))
}

pub fn read_csv(bytes: &[u8]) -> Result<Vec<ExperimentRecord>, CliError> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Io(format!("csv: {e}")))
}

/// Writes to `path` in one call, or to stdout when `path` is `None`.
pub fn emit(bytes: &[u8], path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}
