//! Optimization history as CSV.

use std::fs::File;
use std::path::Path;

use crate::driver::IterationRecord;
use crate::{Error, Result};

pub const HISTORY_HEADER: [&str; 4] = ["iteration", "compliance", "volume_fraction", "enriched_dofs"];

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("{}: {other:?}", path.display())),
    }
}

/// Writes one row per record with 17 significant digits.
pub fn write_history(history: &[IterationRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(HISTORY_HEADER).map_err(|e| csv_error(path, e))?;
    for r in history {
        w.write_record([
            r.iteration.to_string(),
            format!("{:.16e}", r.compliance),
            format!("{:.16e}", r.volume_fraction),
            r.enriched_dofs.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<IterationRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().ne(HISTORY_HEADER) {
        return Err(Error::InvalidArgument(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |field: &str| Error::InvalidArgument(format!("{}: row {}: bad {field}", path.display(), line + 1));
        let iteration = rec[0].parse().map_err(|_| bad("iteration"))?;
        let compliance = rec[1].parse().map_err(|_| bad("compliance"))?;
        let volume_fraction = rec[2].parse().map_err(|_| bad("volume_fraction"))?;
        let enriched_dofs = rec[3].parse().map_err(|_| bad("enriched_dofs"))?;
        out.push(IterationRecord {
            iteration,
            compliance,
            volume_fraction,
            enriched_dofs,
        });
    }
    Ok(out)
}
