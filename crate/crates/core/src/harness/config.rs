use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, Matrix, RngStream};
use crate::objectives::{Dataset, LogisticTask, MatrixQuadratic, MlpLayer, Objective, TinyMlp};
use crate::optimizers::{
    FoMuon, FoMuonConfig, Mezo, MezoConfig, Optimizer, ZoMopi, ZoMopiConfig, ZoMuon, ZoMuonConfig,
};

/// Environment variable that relative output paths are resolved against.
pub const OUTPUT_ROOT_ENV: &str = "ZOMOPI_OUTPUT_ROOT";

/// Synthetic or file-backed classification data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub examples: usize,
    pub dim: usize,
    pub classes: usize,
    pub latent_dim: usize,
    pub separation: f64,
    pub noise: f64,
    pub held_out: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Whitespace-separated text file (label then features per line). When
    /// set, `dim` and `classes` must match the file and the other synthetic
    /// fields are ignored.
    pub path: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            examples: LogisticTask::DEFAULT_EXAMPLES,
            dim: LogisticTask::DEFAULT_DIM,
            classes: LogisticTask::DEFAULT_CLASSES,
            latent_dim: 16,
            separation: 1.0,
            noise: 1.0,
            held_out: LogisticTask::DEFAULT_EXAMPLES / 4,
            batch_size: LogisticTask::DEFAULT_BATCH,
            seed: 0,
            path: None,
        }
    }
}

impl DatasetSpec {
    fn build(&self, offset: u64) -> Result<Dataset> {
        let seed = self.seed.wrapping_add(offset);
        match &self.path {
            Some(path) => {
                let data = Dataset::load_text(path, self.held_out, self.batch_size, seed)?;
                if (data.dim(), data.classes()) != (self.dim, self.classes) {
                    return Err(Error::config(
                        "objective.dataset",
                        format!(
                            "{} has {} features and {} classes; the config declares {} and {}",
                            path.display(),
                            data.dim(),
                            data.classes(),
                            self.dim,
                            self.classes
                        ),
                    ));
                }
                Ok(data)
            }
            None => Dataset::synthetic(
                self.examples,
                self.dim,
                self.classes,
                self.latent_dim,
                self.separation,
                self.noise,
                self.held_out,
                self.batch_size,
                seed,
            ),
        }
    }
}

/// Which objective to optimize. Trial seed `s` builds the instance with
/// seed `seed + s`, so every method sees the same instance for a given `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    /// `½ tr((X − X★)ᵀH(X − X★))` with a random rank-`rank` optimum of
    /// Frobenius norm `scale`. `condition > 1` spreads `H`'s eigenvalues
    /// log-uniformly over `[1/condition, 1]`, on the axes unless `rotated`.
    Quadratic {
        #[serde(default = "default_side")]
        m: usize,
        #[serde(default = "default_side")]
        n: usize,
        #[serde(default = "default_rank")]
        rank: usize,
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default = "one")]
        condition: f64,
        #[serde(default)]
        rotated: bool,
        #[serde(default)]
        noise_scale: f64,
        #[serde(default)]
        seed: u64,
    },
    Logistic {
        #[serde(default)]
        dataset: DatasetSpec,
        #[serde(default = "default_l2")]
        l2: f64,
    },
    /// One layer of a two-layer tanh network; the other layer stays at its
    /// initialization.
    Mlp {
        #[serde(default)]
        dataset: DatasetSpec,
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_layer")]
        layer: MlpLayer,
        #[serde(default = "default_l2")]
        l2: f64,
    },
}

fn default_side() -> usize {
    64
}
fn default_rank() -> usize {
    2
}
fn default_scale() -> f64 {
    5.0
}
fn one() -> f64 {
    1.0
}
fn default_l2() -> f64 {
    1e-4
}
fn default_hidden() -> usize {
    16
}
fn default_layer() -> MlpLayer {
    MlpLayer::Hidden
}
fn default_eval_every() -> u64 {
    1
}
fn default_true() -> bool {
    true
}

/// An objective instance together with its starting point.
pub struct Problem {
    pub objective: Box<dyn Objective>,
    pub x0: Matrix,
}

impl ObjectiveSpec {
    /// Parameter shape, without building the objective.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            ObjectiveSpec::Quadratic { m, n, .. } => (*m, *n),
            ObjectiveSpec::Logistic { dataset, .. } => (dataset.dim, dataset.classes),
            ObjectiveSpec::Mlp {
                dataset, hidden, layer, ..
            } => match layer {
                MlpLayer::Hidden => (dataset.dim, *hidden),
                MlpLayer::Output => (*hidden, dataset.classes),
            },
        }
    }

    /// Builds the instance for trial seed `offset`. Starts at zero, except
    /// the MLP layer, which starts at its initialization.
    pub fn build(&self, offset: u64) -> Result<Problem> {
        match self {
            ObjectiveSpec::Quadratic {
                m,
                n,
                rank,
                scale,
                condition,
                rotated,
                noise_scale,
                seed,
            } => {
                let seed = seed.wrapping_add(offset);
                let target = MatrixQuadratic::low_rank_target(*m, *n, *rank, *scale, seed)?;
                let h = if *condition == 1.0 {
                    Matrix::identity(*m)
                } else if *rotated {
                    MatrixQuadratic::conditioned_hessian(*m, *condition, seed)?
                } else {
                    MatrixQuadratic::diagonal_hessian(*m, *condition)?
                };
                let obj = MatrixQuadratic::new(target.x_star().clone(), h, *noise_scale, seed)?;
                Ok(Problem {
                    objective: Box::new(obj),
                    x0: Matrix::zeros(*m, *n),
                })
            }
            ObjectiveSpec::Logistic { dataset, l2 } => {
                let obj = LogisticTask::new(dataset.build(offset)?, *l2);
                let (d, c) = (obj.data().dim(), obj.data().classes());
                Ok(Problem {
                    objective: Box::new(obj),
                    x0: Matrix::zeros(d, c),
                })
            }
            ObjectiveSpec::Mlp {
                dataset,
                hidden,
                layer,
                l2,
            } => {
                let data = dataset.build(offset)?;
                let seed = dataset.seed.wrapping_add(offset);
                let mlp = TinyMlp::new(data, *hidden, *l2, seed)?;
                let x0 = mlp.weight(*layer).clone();
                Ok(Problem {
                    objective: Box::new(mlp.layer_objective(*layer)),
                    x0,
                })
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let (m, n) = self.shape();
        if m == 0 || n == 0 {
            return Err(Error::config("objective", format!("parameter shape {m}x{n} is empty")));
        }
        if let ObjectiveSpec::Quadratic { rank, condition, .. } = self {
            if *rank == 0 || *rank > m.min(n) {
                return Err(Error::config("objective.rank", format!("must be in 1..={}", m.min(n))));
            }
            if !(*condition >= 1.0 && condition.is_finite()) {
                return Err(Error::config("objective.condition", "must be finite and >= 1"));
            }
        }
        Ok(())
    }
}

/// Optimizer and its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum OptimizerSpec {
    ZoMopi(ZoMopiConfig),
    Mezo(MezoConfig),
    ZoMuon(ZoMuonConfig),
    FoMuon(FoMuonConfig),
}

impl OptimizerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerSpec::ZoMopi(_) => "zo-mopi",
            OptimizerSpec::Mezo(_) => "mezo",
            OptimizerSpec::ZoMuon(_) => "zo-muon",
            OptimizerSpec::FoMuon(_) => "fo-muon",
        }
    }

    /// Budget-charged queries per step: `2N`, or one gradient for FO-Muon.
    pub fn queries_per_step(&self) -> u64 {
        match self {
            OptimizerSpec::ZoMopi(c) => 2 * c.n_queries as u64,
            OptimizerSpec::Mezo(c) => 2 * c.n_queries as u64,
            OptimizerSpec::ZoMuon(c) => 2 * c.n_queries as u64,
            OptimizerSpec::FoMuon(_) => 1,
        }
    }

    pub fn build(&self, shape: (usize, usize), seed: u64) -> Result<Box<dyn Optimizer>> {
        Ok(match *self {
            OptimizerSpec::ZoMopi(c) => Box::new(ZoMopi::new(c, shape, seed)?),
            OptimizerSpec::Mezo(c) => Box::new(Mezo::new(c, seed)?),
            OptimizerSpec::ZoMuon(c) => Box::new(ZoMuon::new(c, shape, seed)?),
            OptimizerSpec::FoMuon(c) => Box::new(FoMuon::new(c, shape)?),
        })
    }

    fn validate(&self, (m, n): (usize, usize)) -> Result<()> {
        let prefixed = |e: Error| match e {
            Error::ConfigInvalid { field, message } => Error::config(format!("optimizer.{field}"), message),
            other => other,
        };
        match self {
            OptimizerSpec::ZoMopi(c) => c.validate(m, n),
            OptimizerSpec::Mezo(c) => c.validate(),
            OptimizerSpec::ZoMuon(c) => c.validate(m),
            OptimizerSpec::FoMuon(c) => c.validate(),
        }
        .map_err(prefixed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveSpec,
    pub optimizer: OptimizerSpec,
    /// Total budget-charged queries per seed.
    pub budget: u64,
    pub seeds: Vec<u64>,
    /// Optimizer steps between recordings.
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    /// Output directory (resolved against [`OUTPUT_ROOT_ENV`] when relative).
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// When false the wall-time column is written as zero, making the CSV
    /// output a pure function of the configuration.
    #[serde(default = "default_true")]
    pub record_wall_time: bool,
    /// Standard deviation of a Gaussian perturbation added to the starting
    /// point (drawn from the trial seed).
    #[serde(default)]
    pub init_scale: f64,
}

impl ExperimentConfig {
    pub fn new(objective: ObjectiveSpec, optimizer: OptimizerSpec, budget: u64, seeds: Vec<u64>) -> Self {
        Self {
            objective,
            optimizer,
            budget,
            seeds,
            eval_every: 1,
            output: None,
            record_wall_time: true,
            init_scale: 0.0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.optimizer.validate(self.objective.shape())?;
        let per_step = self.optimizer.queries_per_step();
        if !self.budget.is_multiple_of(per_step) {
            return Err(Error::config(
                "budget",
                format!("{} is not a multiple of the {per_step} queries per step", self.budget),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("init_scale", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// First 12 hex digits of the SHA-256 of the configuration with
    /// `seeds` and `output` cleared, so every seed of one sweep shares it.
    pub fn hash(&self) -> String {
        let mut key = self.clone();
        key.seeds.clear();
        key.output = None;
        let digest = Sha256::digest(serde_json::to_vec(&key).expect("config serializes"));
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// Output directory after applying [`OUTPUT_ROOT_ENV`].
    pub fn output_dir(&self) -> PathBuf {
        let dir = self.output.clone().unwrap_or_else(|| PathBuf::from("runs"));
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
            _ => dir,
        }
    }

    /// The problem instance and starting point for trial seed `seed`.
    pub fn problem(&self, seed: u64) -> Result<Problem> {
        let mut p = self.objective.build(seed)?;
        if self.init_scale > 0.0 {
            let (m, n) = p.x0.shape();
            let mut rng = RngStream::new(seed, 0x1417);
            p.x0.axpy(self.init_scale, &gaussian_matrix(&mut rng, m, n));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> ExperimentConfig {
        ExperimentConfig::new(
            ObjectiveSpec::Quadratic {
                m: 8,
                n: 6,
                rank: 2,
                scale: 1.0,
                condition: 1.0,
                rotated: false,
                noise_scale: 0.0,
                seed: 0,
            },
            OptimizerSpec::ZoMopi(ZoMopiConfig {
                r: 4,
                k: 2,
                ..Default::default()
            }),
            80,
            vec![0],
        )
    }

    #[test]
    fn json_round_trip() {
        let cfg = quad();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_json_fills_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"objective": {"kind": "logistic"}, "optimizer": {"method": "mezo", "eta": 0.001},
                "budget": 64, "seeds": [1, 2]}"#,
        )
        .unwrap();
        assert_eq!(cfg.objective.shape(), (128, 8));
        assert_eq!(cfg.optimizer.queries_per_step(), 2);
        assert!(cfg.record_wall_time);
    }

    #[test]
    fn field_level_errors() {
        let field_of = |cfg: &ExperimentConfig| match cfg.validate() {
            Err(Error::ConfigInvalid { field, .. }) => field,
            other => panic!("expected ConfigInvalid, got {other:?}"),
        };
        let mut cfg = quad();
        cfg.budget = 81;
        assert_eq!(field_of(&cfg), "budget");
        let mut cfg = quad();
        cfg.seeds.clear();
        assert_eq!(field_of(&cfg), "seeds");
        let mut cfg = quad();
        cfg.optimizer = OptimizerSpec::ZoMopi(ZoMopiConfig {
            r: 4,
            k: 5,
            ..Default::default()
        });
        assert_eq!(field_of(&cfg), "optimizer.k");
        let unknown = r#"{"objective": {"kind": "logistic"}, "optimizer": {"method": "mezo", "lr": 1},
                          "budget": 2, "seeds": [0]}"#;
        assert!(ExperimentConfig::from_json(unknown).is_err());
    }

    #[test]
    fn hash_ignores_seeds_and_output() {
        let a = quad();
        let mut b = quad();
        b.seeds = vec![4, 5];
        b.output = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 12);
        b.budget = 160;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn trial_seed_shifts_the_instance() {
        let cfg = quad();
        let a = cfg.problem(0).unwrap();
        let b = cfg.problem(1).unwrap();
        // every instance has loss scale²/2 at zero
        let x = Matrix::from_fn(8, 6, |i, j| (i + 2 * j) as f64 * 0.1);
        assert_ne!(a.objective.loss(&x, 0), b.objective.loss(&x, 0));
        assert_eq!(a.objective.loss(&x, 0), cfg.problem(0).unwrap().objective.loss(&x, 0));
    }
}
