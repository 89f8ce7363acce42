use std::path::Path;

use crate::error::{Error, Result};

/// One recorded point of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub step: u64,
    /// Cumulative budget-charged queries.
    pub queries: u64,
    /// Loss at the current point on the mini-batch of the last step.
    pub train_loss: f64,
    /// Loss on the held-out evaluation batch.
    pub eval_loss: f64,
    pub update_norm: f64,
    /// Milliseconds since the trial started.
    pub wall_ms: f64,
    pub spi_error: Option<f64>,
}

pub const CSV_HEADER: [&str; 7] = [
    "step",
    "queries",
    "train_loss",
    "eval_loss",
    "update_norm",
    "wall_ms",
    "spi_error",
];

/// 17 significant digits: enough to round-trip any `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Writes a header and one row per record.
pub fn emit_csv(records: &[TrajectoryRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("emit_csv needs at least one record".into()));
    }
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.step.to_string(),
            r.queries.to_string(),
            fmt_f64(r.train_loss),
            fmt_f64(r.eval_loss),
            fmt_f64(r.update_norm),
            fmt_f64(r.wall_ms),
            r.spi_error.map(fmt_f64).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`emit_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = rdr.headers().map_err(csv_err)?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::InvalidArgument(format!("{}: unexpected header", path.display())));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let bad = |col: usize| {
            Error::InvalidArgument(format!(
                "{}: row {}: bad `{}`",
                path.display(),
                line + 2,
                CSV_HEADER[col]
            ))
        };
        let int = |col: usize| row.get(col).and_then(|s| s.parse::<u64>().ok()).ok_or_else(|| bad(col));
        let float = |col: usize| row.get(col).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad(col));
        let spi_error = match row.get(6) {
            Some("") => None,
            Some(_) => Some(float(6)?),
            None => return Err(bad(6)),
        };
        out.push(TrajectoryRecord {
            step: int(0)?,
            queries: int(1)?,
            train_loss: float(2)?,
            eval_loss: float(3)?,
            update_norm: float(4)?,
            wall_ms: float(5)?,
            spi_error,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64) -> TrajectoryRecord {
        TrajectoryRecord {
            step,
            queries: 8 * step,
            train_loss: 1.0 / (step as f64 + 3.0),
            eval_loss: std::f64::consts::PI * step as f64,
            update_norm: 1e-300 * step as f64,
            wall_ms: 0.1,
            spi_error: step.is_multiple_of(2).then(|| 2f64.sqrt() / 7.0),
        }
    }

    #[test]
    fn one_record_two_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        emit_csv(&[rec(0)], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    }

    #[test]
    fn thousand_records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let records: Vec<_> = (0..1000).map(rec).collect();
        emit_csv(&records, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1001);
        assert_eq!(read_csv(&path).unwrap(), records);
    }

    #[test]
    fn non_finite_values_survive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut r = rec(1);
        r.train_loss = f64::INFINITY;
        r.spi_error = Some(f64::INFINITY);
        emit_csv(&[r.clone()], &path).unwrap();
        assert_eq!(read_csv(&path).unwrap(), vec![r]);
    }

    #[test]
    fn empty_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_csv(&[], &dir.path().join("e.csv")).is_err());
        match read_csv(&dir.path().join("missing.csv")) {
            Err(Error::Csv { path, .. }) => assert!(path.ends_with("missing.csv")),
            other => panic!("{other:?}"),
        }
    }
}
