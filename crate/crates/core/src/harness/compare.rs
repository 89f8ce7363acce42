use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::record::{read_csv, TrajectoryRecord};
use crate::error::{Error, Result};

/// First cumulative-query count at which the eval loss is `<= target`.
pub fn queries_to_target(records: &[TrajectoryRecord], target: f64) -> Option<u64> {
    records.iter().find(|r| r.eval_loss <= target).map(|r| r.queries)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetRow {
    pub label: String,
    /// `None` when the run never reached the target.
    pub queries: Option<u64>,
    pub final_queries: u64,
    pub final_eval_loss: f64,
}

/// Queries-to-target for each labelled trajectory.
pub fn compare_budget_to_target(runs: &[(String, Vec<TrajectoryRecord>)], target: f64) -> Vec<TargetRow> {
    runs.iter()
        .map(|(label, records)| {
            let last = records.last();
            TargetRow {
                label: label.clone(),
                queries: queries_to_target(records, target),
                final_queries: last.map_or(0, |r| r.queries),
                final_eval_loss: last.map_or(f64::NAN, |r| r.eval_loss),
            }
        })
        .collect()
}

fn cell(q: Option<u64>) -> String {
    q.map_or_else(|| "N/A".to_string(), |q| q.to_string())
}

/// Aligned plain-text table.
pub fn render_table(rows: &[TargetRow], target: f64) -> String {
    let width = rows.iter().map(|r| r.label.len()).chain([5]).max().unwrap_or(5);
    let mut out = format!("target eval loss {target}\n");
    let _ = writeln!(
        out,
        "{:<width$}  {:>16}  {:>14}  {:>14}",
        "run", "queries_to_target", "final_queries", "final_eval"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>16}  {:>14}  {:>14.6e}",
            r.label,
            cell(r.queries),
            r.final_queries,
            r.final_eval_loss
        );
    }
    out
}

pub fn write_table_csv(rows: &[TargetRow], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["run", "queries_to_target", "final_queries", "final_eval_loss"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            cell(r.queries),
            r.final_queries.to_string(),
            format!("{:.16e}", r.final_eval_loss),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Every `*__seed*.csv` trajectory in `dir`, labelled by file stem, sorted.
pub fn load_trajectories(dir: &Path) -> Result<Vec<(String, Vec<TrajectoryRecord>)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        if path.extension().is_some_and(|e| e == "csv") && stem.contains("__seed") {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let label = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            Ok((label, read_csv(&p)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(losses: &[f64]) -> Vec<TrajectoryRecord> {
        losses
            .iter()
            .enumerate()
            .map(|(i, &l)| TrajectoryRecord {
                step: i as u64,
                queries: 10 * i as u64,
                train_loss: l,
                eval_loss: l,
                update_norm: 0.0,
                wall_ms: 0.0,
                spi_error: None,
            })
            .collect()
    }

    #[test]
    fn never_reaching_is_na() {
        let rows = compare_budget_to_target(&[("a".into(), traj(&[3.0, 2.0])), ("b".into(), traj(&[3.0, 1.0]))], 1.5);
        assert_eq!(rows[0].queries, None);
        assert_eq!(rows[1].queries, Some(10));
        let text = render_table(&rows, 1.5);
        assert!(text.contains("N/A"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn initial_loss_target_is_zero() {
        let runs = [("a".into(), traj(&[3.0, 2.0])), ("b".into(), traj(&[3.0, 2.5]))];
        assert!(compare_budget_to_target(&runs, 3.0)
            .iter()
            .all(|r| r.queries == Some(0)));
    }

    #[test]
    fn table_csv_and_loader() {
        let dir = tempfile::tempdir().unwrap();
        crate::harness::emit_csv(&traj(&[2.0, 1.0]), &dir.path().join("m__h__seed0.csv")).unwrap();
        std::fs::write(dir.path().join("m__h__summary.csv"), "x\n").unwrap();
        let runs = load_trajectories(dir.path()).unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].0, "m__h__seed0");
        let rows = compare_budget_to_target(&runs, 1.0);
        let out = dir.path().join("table.csv");
        write_table_csv(&rows, &out).unwrap();
        assert_eq!(
            std::fs::read_to_string(out)
                .unwrap()
                .lines()
                .nth(1)
                .unwrap()
                .split(',')
                .nth(1),
            Some("10")
        );
    }
}
