use std::path::Path;

use crate::error::{Error, Result};
use crate::fisher::MetricsRecord;

pub const METRICS_FORMAT_VERSION: u32 = 1;

/// Header `iter,e_hat,omega_hat,lambda,loss,chi2_oracle,chi2_kde_proxy,wall_ms`;
/// absent optional values are empty cells.
pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    if records.is_empty() {
        w.write_record(HEADER).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

const HEADER: [&str; 8] = [
    "iter",
    "e_hat",
    "omega_hat",
    "lambda",
    "loss",
    "chi2_oracle",
    "chi2_kde_proxy",
    "wall_ms",
];

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::MalformedCsv(format!("{other:?}")),
    }
}
