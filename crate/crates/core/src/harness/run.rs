use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::record::{emit_csv, fmt_f64, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::ledger::{Phase, QueryLedger};
use crate::objectives::EVAL_BATCH;

#[derive(Clone, Debug, PartialEq)]
pub enum TrialStatus {
    Ok,
    /// The optimizer returned an error; the records end at the last good step.
    Failed(String),
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub seed: u64,
    pub status: TrialStatus,
    pub records: Vec<TrajectoryRecord>,
    pub ledger: QueryLedger,
}

impl TrialResult {
    pub fn succeeded(&self) -> bool {
        self.status == TrialStatus::Ok
    }

    pub fn final_record(&self) -> &TrajectoryRecord {
        self.records.last().expect("every trial records step 0")
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub hash: String,
    /// In the order of `config.seeds`.
    pub trials: Vec<TrialResult>,
}

impl ExperimentResult {
    pub fn all_succeeded(&self) -> bool {
        self.trials.iter().all(TrialResult::succeeded)
    }

    pub fn method(&self) -> &'static str {
        self.config.optimizer.name()
    }

    /// `{method}__{hash}__seed{seed}.csv`.
    pub fn trajectory_file_name(&self, seed: u64) -> String {
        format!("{}__{}__seed{seed}.csv", self.method(), self.hash)
    }

    /// Writes one trajectory CSV per seed (failed seeds included) and a
    /// `{method}__{hash}__summary.csv` with per-seed status.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for t in &self.trials {
            let path = dir.join(self.trajectory_file_name(t.seed));
            emit_csv(&t.records, &path)?;
            written.push(path);
        }
        let path = dir.join(format!("{}__{}__summary.csv", self.method(), self.hash));
        let csv_err = |source| Error::Csv {
            path: path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(["seed", "status", "steps", "queries", "eval_loss", "message"])
            .map_err(csv_err)?;
        for t in &self.trials {
            let last = t.final_record();
            let (status, message) = match &t.status {
                TrialStatus::Ok => ("ok", String::new()),
                TrialStatus::Failed(m) => ("failed", m.clone()),
            };
            w.write_record([
                t.seed.to_string(),
                status.to_string(),
                last.step.to_string(),
                last.queries.to_string(),
                fmt_f64(last.eval_loss),
                message,
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
        std::fs::write(
            dir.join(format!("{}__{}__config.json", self.method(), self.hash)),
            self.config.to_json(),
        )
        .map_err(|e| Error::io(dir, e))?;
        Ok(written)
    }
}

/// Runs every seed of `cfg`, in parallel. Setup errors (an invalid
/// configuration, an objective that cannot be built) abort the whole run;
/// errors during optimization only fail their own seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let trials = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_trial(cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        config: cfg.clone(),
        hash: cfg.hash(),
        trials,
    })
}

/// Runs several configurations as one comparison. All of them must share
/// the objective, the budget and the seed list; evaluation batches are
/// shared by construction.
pub fn run_comparison(cfgs: &[ExperimentConfig]) -> Result<Vec<ExperimentResult>> {
    let Some(first) = cfgs.first() else {
        return Err(Error::InvalidArgument(
            "a comparison needs at least one configuration".into(),
        ));
    };
    for (i, cfg) in cfgs.iter().enumerate().skip(1) {
        let mismatch = if cfg.objective != first.objective {
            Some("objective")
        } else if cfg.budget != first.budget {
            Some("budget")
        } else if cfg.seeds != first.seeds {
            Some("seeds")
        } else {
            None
        };
        if let Some(field) = mismatch {
            return Err(Error::config(
                field,
                format!(
                    "configuration {i} ({}) differs from configuration 0",
                    cfg.optimizer.name()
                ),
            ));
        }
    }
    cfgs.iter().map(run_experiment).collect()
}

/// Runs a single seed.
pub fn run_trial(cfg: &ExperimentConfig, seed: u64) -> Result<TrialResult> {
    cfg.validate()?;
    let problem = cfg.problem(seed)?;
    let obj = problem.objective.as_ref();
    let mut opt = cfg.optimizer.build(obj.shape(), seed)?;
    let per_step = opt.queries_per_step();
    let start = Instant::now();
    let mut ledger = QueryLedger::new();
    let mut x = problem.x0;

    let record = |step: u64, ledger: &mut QueryLedger, x: &crate::linalg::Matrix, norm: f64, spi: Option<f64>| {
        let train_batch = step.saturating_sub(1);
        TrajectoryRecord {
            step,
            queries: ledger.budget_queries(),
            train_loss: ledger.evaluate(Phase::Monitor, obj, x, train_batch),
            eval_loss: ledger.evaluate(Phase::Monitor, obj, x, EVAL_BATCH),
            update_norm: norm,
            wall_ms: if cfg.record_wall_time {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
            spi_error: spi,
        }
    };

    let mut records = vec![record(0, &mut ledger, &x, 0.0, None)];
    let mut status = TrialStatus::Ok;
    let mut step = 0u64;
    while ledger.budget_queries() + per_step <= cfg.budget {
        match opt.step(obj, &x, step, &mut ledger) {
            Ok(out) => {
                step += 1;
                x = out.x;
                let last = ledger.budget_queries() + per_step > cfg.budget;
                if step.is_multiple_of(cfg.eval_every) || last {
                    let spi = out.diagnostics.get("spi_tracking_error").copied();
                    records.push(record(step, &mut ledger, &x, out.update_norm, spi));
                }
            }
            Err(e) => {
                status = TrialStatus::Failed(format!("step {step}: {e}"));
                break;
            }
        }
    }
    Ok(TrialResult {
        seed,
        status,
        records,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{ObjectiveSpec, OptimizerSpec};
    use crate::harness::record::read_csv;
    use crate::optimizers::{MezoConfig, ZoMopiConfig};

    fn cfg(budget: u64) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(
            ObjectiveSpec::Quadratic {
                m: 8,
                n: 6,
                rank: 2,
                scale: 1.0,
                condition: 1.0,
                rotated: false,
                noise_scale: 0.1,
                seed: 3,
            },
            OptimizerSpec::ZoMopi(ZoMopiConfig {
                r: 4,
                k: 2,
                nu: 5,
                ..Default::default()
            }),
            budget,
            vec![0, 1],
        );
        c.eval_every = 3;
        c.record_wall_time = false;
        c
    }

    #[test]
    fn zero_budget_single_record() {
        let res = run_experiment(&cfg(0)).unwrap();
        for t in &res.trials {
            assert_eq!(t.records.len(), 1);
            assert_eq!(t.records[0].queries, 0);
            assert_eq!(t.records[0].step, 0);
        }
    }

    #[test]
    fn records_every_k_steps_and_the_last() {
        let res = run_experiment(&cfg(80)).unwrap();
        let steps: Vec<u64> = res.trials[0].records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 3, 6, 9, 10]);
        assert_eq!(res.trials[0].final_record().queries, 80);
        assert!(res.trials[0].records.windows(2).all(|w| w[0].queries < w[1].queries));
    }

    #[test]
    fn monitoring_is_not_charged() {
        let res = run_experiment(&cfg(80)).unwrap();
        let ledger = &res.trials[0].ledger;
        assert_eq!(ledger.budget_queries(), 80);
        assert_eq!(ledger.count(Phase::Monitor), 2 * 5);
    }

    #[test]
    fn failed_seed_is_recorded() {
        let mut c = cfg(800);
        // a huge step makes the loss overflow
        c.optimizer = OptimizerSpec::Mezo(MezoConfig {
            eta: 1e200,
            ..Default::default()
        });
        let res = run_experiment(&c).unwrap();
        assert!(!res.all_succeeded());
        assert!(matches!(res.trials[0].status, TrialStatus::Failed(_)));
        assert!(!res.trials[0].records.is_empty());
    }

    #[test]
    fn comparison_rejects_mismatched_budgets() {
        let a = cfg(80);
        let mut b = cfg(80);
        b.optimizer = OptimizerSpec::Mezo(MezoConfig::default());
        assert_eq!(run_comparison(&[a.clone(), b.clone()]).unwrap().len(), 2);
        b.budget = 160;
        match run_comparison(&[a, b]) {
            Err(Error::ConfigInvalid { field, .. }) => assert_eq!(field, "budget"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn writes_named_files() {
        let dir = tempfile::tempdir().unwrap();
        let res = run_experiment(&cfg(80)).unwrap();
        let files = res.write(dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let name = format!("zo-mopi__{}__seed1.csv", res.hash);
        assert!(files[1].ends_with(&name));
        assert_eq!(read_csv(&files[1]).unwrap(), res.trials[1].records);
    }
}
