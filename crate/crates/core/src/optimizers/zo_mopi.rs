use serde::{Deserialize, Serialize};

use super::{Optimizer, OptimizerStep};
use crate::error::{Error, Result};
use crate::estimator::{rge_subspace, RgeConfig, SubspaceState};
use crate::ledger::{LossFn, QueryLedger};
use crate::linalg::{svd_oracle, Matrix, RngStream};
use crate::objectives::Objective;
use crate::spectral::{msign_k_oracle, principal_angle_tangent, spi_step, SpiCache};

/// Exponential moving average `M ← β·M + (1 − β)·Ĝ` in the reduced space.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    m: Matrix,
    beta: f64,
}

impl MomentumState {
    /// Zero momentum of shape `r × n`.
    pub fn new(r: usize, n: usize, beta: f64) -> Result<Self> {
        Self::from_matrix(Matrix::zeros(r, n), beta)
    }

    pub fn from_matrix(m: Matrix, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::config("beta", format!("must lie in [0, 1), got {beta}")));
        }
        Ok(Self { m, beta })
    }

    pub fn m(&self) -> &Matrix {
        &self.m
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn update(&mut self, g: &Matrix) -> Result<()> {
        g.check_shape("momentum update", self.m.shape())?;
        self.m.scale_in_place(self.beta);
        self.m.axpy(1.0 - self.beta, g);
        Ok(())
    }
}

/// Scalar applied when momentum is carried into a refreshed basis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionScale {
    /// `1/m`, as the algorithm listing writes it.
    #[default]
    #[serde(rename = "as_written_1_over_m")]
    AsWritten1OverM,
    /// `1`; the change-of-basis map for orthonormal bases.
    #[serde(rename = "identity")]
    Identity,
}

/// How the momentum is orthogonalized each step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orthogonalizer {
    /// One warm-started streaming power-iteration pass.
    #[default]
    Spi,
    /// Exact `msign_k` through the SVD oracle. For tests and ablations.
    ExactTopK,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoMopiConfig {
    pub eta: f64,
    pub beta: f64,
    pub mu: f64,
    pub r: usize,
    pub k: usize,
    pub nu: usize,
    pub n_queries: usize,
    pub projection_scale: ProjectionScale,
    pub orthogonalizer: Orthogonalizer,
    /// Record the tangent between the cached and the exact top-`k` right
    /// subspace of the momentum every step (costs one SVD).
    pub track_spi: bool,
}

impl Default for ZoMopiConfig {
    fn default() -> Self {
        Self {
            eta: 1e-2,
            beta: 0.9,
            mu: 1e-3,
            r: 64,
            k: 32,
            nu: 500,
            n_queries: 4,
            projection_scale: ProjectionScale::default(),
            orthogonalizer: Orthogonalizer::default(),
            track_spi: false,
        }
    }
}

impl ZoMopiConfig {
    pub fn rge(&self) -> RgeConfig {
        RgeConfig {
            mu: self.mu,
            n_queries: self.n_queries,
        }
    }

    /// Checks the configuration against an `m × n` parameter.
    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::config(
                "eta",
                format!("must be finite and >= 0, got {}", self.eta),
            ));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::config("beta", format!("must lie in [0, 1), got {}", self.beta)));
        }
        self.rge().validate()?;
        if self.nu == 0 {
            return Err(Error::config("nu", "must be at least 1"));
        }
        if self.r == 0 || self.r > m {
            return Err(Error::config("r", format!("need 1 <= r <= m={m}, got {}", self.r)));
        }
        if self.k == 0 || self.k > self.r || self.k > n {
            return Err(Error::config(
                "k",
                format!("need 1 <= k <= min(r={}, n={n}), got {}", self.r, self.k),
            ));
        }
        Ok(())
    }
}

/// `s · a_newᵀ · a_old · m`, with `s = 1/m_rows` or `1` per `scale`.
pub fn project_momentum(
    mom: &MomentumState,
    a_new: &Matrix,
    a_old: &Matrix,
    m_rows: usize,
    scale: ProjectionScale,
) -> Result<MomentumState> {
    let r = mom.m.rows();
    a_new.check_shape("project_momentum a_new", (m_rows, r))?;
    a_old.check_shape("project_momentum a_old", (m_rows, r))?;
    let mut projected = a_new.t_matmul(a_old).matmul(&mom.m);
    if scale == ProjectionScale::AsWritten1OverM {
        projected.scale_in_place(1.0 / m_rows as f64);
    }
    Ok(MomentumState {
        m: projected,
        beta: mom.beta,
    })
}

/// Sampling subspace, momentum, and power-iteration cache of one run.
#[derive(Clone, Debug)]
pub struct ZoMopiState {
    pub sub: SubspaceState,
    pub mom: MomentumState,
    pub cache: SpiCache,
}

impl ZoMopiState {
    /// Fresh state for an `m × n` parameter: sampled basis, zero momentum,
    /// cold-started cache.
    pub fn init(cfg: &ZoMopiConfig, m: usize, n: usize, seed: u64) -> Result<Self> {
        cfg.validate(m, n)?;
        let root = RngStream::new(seed, 0);
        let sub = SubspaceState::new(m, cfg.r, cfg.nu, root.split(STREAM_SUBSPACE))?;
        let mom = MomentumState::new(cfg.r, n, cfg.beta)?;
        let cache = SpiCache::cold_start(n, cfg.k, &mut root.split(STREAM_CACHE))?;
        Ok(Self { sub, mom, cache })
    }
}

const STREAM_SUBSPACE: u64 = 1;
const STREAM_CACHE: u64 = 2;
const STREAM_ESTIMATE: u64 = 3;

/// One ZO-MOPI iteration: lazy refresh with momentum projection, subspace
/// estimate, momentum update, partial orthogonalization, then
/// `x' = x − η·a·o`.
///
/// Exactly zero momentum (a constant objective) yields a zero update and
/// leaves the cache untouched.
#[allow(clippy::too_many_arguments)]
pub fn zo_mopi_step<L: LossFn + ?Sized>(
    x: &Matrix,
    state: &ZoMopiState,
    cfg: &ZoMopiConfig,
    loss: &L,
    batch: u64,
    rng: &mut RngStream,
    ledger: &mut QueryLedger,
) -> Result<(OptimizerStep, ZoMopiState)> {
    let (m, n) = x.shape();
    cfg.validate(m, n)?;
    state.mom.m.check_shape("zo_mopi momentum", (state.sub.r(), n))?;
    if state.sub.m() != m || state.sub.r() != cfg.r {
        return Err(Error::DimensionMismatch {
            context: "zo_mopi subspace basis",
            expected: (m, cfg.r),
            actual: state.sub.a().shape(),
        });
    }
    if state.cache.n() != n || state.cache.k() != cfg.k {
        return Err(Error::DimensionMismatch {
            context: "zo_mopi cache basis",
            expected: (n, cfg.k),
            actual: state.cache.v().shape(),
        });
    }

    let mut sub = state.sub.clone();
    let mut mom = state.mom.clone();
    mom.beta = cfg.beta;
    let mut refreshed = false;
    if sub.refresh_due() {
        let a_old = sub.refresh()?;
        mom = project_momentum(&mom, sub.a(), &a_old, m, cfg.projection_scale)?;
        refreshed = true;
    }

    let before = ledger.budget_queries();
    let g = rge_subspace(loss, x, &sub, &cfg.rge(), batch, rng, ledger)?;
    mom.update(&g)?;

    let (o, cache, degenerate) = if mom.m.max_abs() == 0.0 {
        (Matrix::zeros(cfg.r, n), state.cache.clone(), cfg.k)
    } else {
        match cfg.orthogonalizer {
            Orthogonalizer::Spi => {
                let (po, cache) = spi_step(&mom.m, &state.cache, rng)?;
                (po.o, cache, po.degenerate_columns)
            }
            Orthogonalizer::ExactTopK => (msign_k_oracle(&mom.m, cfg.k)?, state.cache.clone(), 0),
        }
    };

    let mut x_next = x.clone();
    x_next.axpy(-cfg.eta, &sub.a().matmul(&o));
    sub.advance();

    let mut step = OptimizerStep::new(x, x_next, ledger.budget_queries() - before);
    step.diagnostics.insert("spi_degenerate_columns", degenerate as f64);
    step.diagnostics.insert("spi_restarts", cache.restarts() as f64);
    step.diagnostics.insert("refreshed", if refreshed { 1.0 } else { 0.0 });
    if cfg.track_spi && degenerate < cfg.k {
        let v_star = svd_oracle(&mom.m)?.v.columns(0, cfg.k);
        step.diagnostics
            .insert("spi_tracking_error", principal_angle_tangent(cache.v(), &v_star)?);
    }
    Ok((step, ZoMopiState { sub, mom, cache }))
}

/// Owning driver for [`zo_mopi_step`].
#[derive(Clone, Debug)]
pub struct ZoMopi {
    cfg: ZoMopiConfig,
    state: ZoMopiState,
    rng: RngStream,
}

impl ZoMopi {
    pub fn new(cfg: ZoMopiConfig, shape: (usize, usize), seed: u64) -> Result<Self> {
        let state = ZoMopiState::init(&cfg, shape.0, shape.1, seed)?;
        let rng = RngStream::new(seed, 0).split(STREAM_ESTIMATE);
        Ok(Self { cfg, state, rng })
    }

    pub fn config(&self) -> &ZoMopiConfig {
        &self.cfg
    }

    pub fn state(&self) -> &ZoMopiState {
        &self.state
    }
}

impl Optimizer for ZoMopi {
    fn name(&self) -> &'static str {
        "zo-mopi"
    }

    fn queries_per_step(&self) -> u64 {
        self.cfg.rge().queries_per_estimate()
    }

    fn step(&mut self, obj: &dyn Objective, x: &Matrix, batch: u64, ledger: &mut QueryLedger) -> Result<OptimizerStep> {
        let (step, state) = zo_mopi_step(x, &self.state, &self.cfg, obj, batch, &mut self.rng, ledger)?;
        self.state = state;
        Ok(step)
    }
}
