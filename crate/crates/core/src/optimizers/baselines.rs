use serde::{Deserialize, Serialize};

use super::{Optimizer, OptimizerStep};
use crate::error::{Error, Result};
use crate::estimator::{rge_full, rge_subspace, RgeConfig, SubspaceState};
use crate::ledger::{LossFn, Phase, QueryLedger};
use crate::linalg::{Matrix, RngStream};
use crate::objectives::Objective;
use crate::spectral::{NewtonSchulz, NS_DEFAULT_ITERS};

/// Newton–Schulz variant used by the Muon-style baselines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NsFlavor {
    /// `x(15 − 10x² + 3x⁴)/8` on spectral-norm-scaled input.
    #[default]
    Convergent,
    /// The tuned Muon quintic on Frobenius-scaled input.
    MuonQuintic,
}

impl NsFlavor {
    pub fn with_iters(self, iters: usize) -> NewtonSchulz {
        match self {
            NsFlavor::Convergent => NewtonSchulz {
                iters,
                ..NewtonSchulz::default()
            },
            NsFlavor::MuonQuintic => NewtonSchulz::muon_quintic(iters),
        }
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta >= 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::config("eta", format!("must be finite and >= 0, got {eta}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MezoConfig {
    pub eta: f64,
    pub mu: f64,
    pub n_queries: usize,
}

impl Default for MezoConfig {
    fn default() -> Self {
        Self {
            eta: 1e-6,
            mu: 1e-3,
            n_queries: 1,
        }
    }
}

impl MezoConfig {
    pub fn rge(&self) -> RgeConfig {
        RgeConfig {
            mu: self.mu,
            n_queries: self.n_queries,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_eta(self.eta)?;
        self.rge().validate()
    }
}

/// ZO-SGD: `x' = x − η·rge_full(x)`.
pub fn mezo_step<L: LossFn + ?Sized>(
    x: &Matrix,
    cfg: &MezoConfig,
    loss: &L,
    batch: u64,
    rng: &mut RngStream,
    ledger: &mut QueryLedger,
) -> Result<OptimizerStep> {
    cfg.validate()?;
    let before = ledger.budget_queries();
    let g = rge_full(loss, x, &cfg.rge(), batch, rng, ledger)?;
    let mut next = x.clone();
    next.axpy(-cfg.eta, &g);
    Ok(OptimizerStep::new(x, next, ledger.budget_queries() - before))
}

#[derive(Clone, Debug)]
pub struct Mezo {
    cfg: MezoConfig,
    rng: RngStream,
}

impl Mezo {
    pub fn new(cfg: MezoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            rng: RngStream::new(seed, 0).split(3),
        })
    }
}

impl Optimizer for Mezo {
    fn name(&self) -> &'static str {
        "mezo"
    }

    fn queries_per_step(&self) -> u64 {
        self.cfg.rge().queries_per_estimate()
    }

    fn step(&mut self, obj: &dyn Objective, x: &Matrix, batch: u64, ledger: &mut QueryLedger) -> Result<OptimizerStep> {
        mezo_step(x, &self.cfg, obj, batch, &mut self.rng, ledger)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoMuonConfig {
    pub eta: f64,
    pub mu: f64,
    pub r: usize,
    pub nu: usize,
    pub n_queries: usize,
    pub ns_flavor: NsFlavor,
    pub ns_iters: usize,
}

impl Default for ZoMuonConfig {
    fn default() -> Self {
        Self {
            eta: 1e-2,
            mu: 1e-3,
            r: 64,
            nu: 100,
            n_queries: 4,
            ns_flavor: NsFlavor::default(),
            ns_iters: NS_DEFAULT_ITERS,
        }
    }
}

impl ZoMuonConfig {
    pub fn rge(&self) -> RgeConfig {
        RgeConfig {
            mu: self.mu,
            n_queries: self.n_queries,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        check_eta(self.eta)?;
        self.rge().validate()?;
        if self.r == 0 || self.r > m {
            return Err(Error::config("r", format!("need 1 <= r <= m={m}, got {}", self.r)));
        }
        if self.nu == 0 {
            return Err(Error::config("nu", "must be at least 1"));
        }
        if self.ns_iters == 0 {
            return Err(Error::config("ns_iters", "must be at least 1"));
        }
        Ok(())
    }
}

/// Subspace estimate `Ĝ`, then `x' = x − η·a·NS(Ĝ)`. No momentum; the basis
/// is refreshed every `nu` steps.
#[allow(clippy::too_many_arguments)]
pub fn zo_muon_step<L: LossFn + ?Sized>(
    x: &Matrix,
    sub: &SubspaceState,
    cfg: &ZoMuonConfig,
    loss: &L,
    batch: u64,
    rng: &mut RngStream,
    ledger: &mut QueryLedger,
) -> Result<(OptimizerStep, SubspaceState)> {
    cfg.validate(x.rows())?;
    let mut sub = sub.clone();
    if sub.refresh_due() {
        sub.refresh()?;
    }
    let before = ledger.budget_queries();
    let g = rge_subspace(loss, x, &sub, &cfg.rge(), batch, rng, ledger)?;
    let o = cfg.ns_flavor.with_iters(cfg.ns_iters).apply(&g);
    let mut next = x.clone();
    next.axpy(-cfg.eta, &sub.a().matmul(&o));
    sub.advance();
    Ok((OptimizerStep::new(x, next, ledger.budget_queries() - before), sub))
}

#[derive(Clone, Debug)]
pub struct ZoMuon {
    cfg: ZoMuonConfig,
    sub: SubspaceState,
    rng: RngStream,
}

impl ZoMuon {
    pub fn new(cfg: ZoMuonConfig, shape: (usize, usize), seed: u64) -> Result<Self> {
        cfg.validate(shape.0)?;
        let root = RngStream::new(seed, 0);
        let sub = SubspaceState::new(shape.0, cfg.r, cfg.nu, root.split(1))?;
        Ok(Self {
            cfg,
            sub,
            rng: root.split(3),
        })
    }

    pub fn subspace(&self) -> &SubspaceState {
        &self.sub
    }
}

impl Optimizer for ZoMuon {
    fn name(&self) -> &'static str {
        "zo-muon"
    }

    fn queries_per_step(&self) -> u64 {
        self.cfg.rge().queries_per_estimate()
    }

    fn step(&mut self, obj: &dyn Objective, x: &Matrix, batch: u64, ledger: &mut QueryLedger) -> Result<OptimizerStep> {
        let (step, sub) = zo_muon_step(x, &self.sub, &self.cfg, obj, batch, &mut self.rng, ledger)?;
        self.sub = sub;
        Ok(step)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoMuonConfig {
    pub eta: f64,
    pub beta: f64,
    pub ns_flavor: NsFlavor,
    pub ns_iters: usize,
}

impl Default for FoMuonConfig {
    fn default() -> Self {
        Self {
            eta: 1e-2,
            beta: 0.9,
            ns_flavor: NsFlavor::default(),
            ns_iters: NS_DEFAULT_ITERS,
        }
    }
}

impl FoMuonConfig {
    pub fn validate(&self) -> Result<()> {
        check_eta(self.eta)?;
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::config("beta", format!("must lie in [0, 1), got {}", self.beta)));
        }
        if self.ns_iters == 0 {
            return Err(Error::config("ns_iters", "must be at least 1"));
        }
        Ok(())
    }
}

/// First-order Muon: `mom' = β·mom + (1−β)·grad`, `x' = x − η·NS(mom')`.
/// Zero momentum gives a zero update.
pub fn fo_muon_step(
    x: &Matrix,
    grad: &Matrix,
    eta: f64,
    beta: f64,
    mom_full: &Matrix,
    ns: &NewtonSchulz,
) -> Result<(Matrix, Matrix)> {
    grad.check_shape("fo_muon gradient", x.shape())?;
    mom_full.check_shape("fo_muon momentum", x.shape())?;
    let mut mom = mom_full.scale(beta);
    mom.axpy(1.0 - beta, grad);
    let mut next = x.clone();
    next.axpy(-eta, &ns.apply(&mom));
    Ok((next, mom))
}

/// Charges one [`Phase::Gradient`] query per step.
#[derive(Clone, Debug)]
pub struct FoMuon {
    cfg: FoMuonConfig,
    mom: Matrix,
}

impl FoMuon {
    pub fn new(cfg: FoMuonConfig, shape: (usize, usize)) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            mom: Matrix::zeros(shape.0, shape.1),
        })
    }
}

impl Optimizer for FoMuon {
    fn name(&self) -> &'static str {
        "fo-muon"
    }

    fn queries_per_step(&self) -> u64 {
        1
    }

    fn step(&mut self, obj: &dyn Objective, x: &Matrix, batch: u64, ledger: &mut QueryLedger) -> Result<OptimizerStep> {
        x.check_shape("fo_muon parameters", obj.shape())?;
        ledger.charge(Phase::Gradient, 1);
        let grad = obj.gradient(x, batch);
        let ns = self.cfg.ns_flavor.with_iters(self.cfg.ns_iters);
        let (next, mom) = fo_muon_step(x, &grad, self.cfg.eta, self.cfg.beta, &self.mom, &ns)?;
        self.mom = mom;
        Ok(OptimizerStep::new(x, next, 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::FnLoss;
    use crate::linalg::{gaussian_matrix, qr_decompose};
    use crate::objectives::{eval_loss, MatrixQuadratic};

    #[test]
    fn mezo_constant_loss_is_stationary() {
        let obj = FnLoss::new((3, 2), |_: &Matrix, _| 7.0);
        let x = Matrix::from_fn(3, 2, |i, j| (i + j) as f64);
        let mut ledger = QueryLedger::new();
        let cfg = MezoConfig {
            eta: 0.5,
            n_queries: 3,
            ..MezoConfig::default()
        };
        let step = mezo_step(&x, &cfg, &obj, 0, &mut RngStream::new(0, 0), &mut ledger).unwrap();
        assert_eq!(step.x, x);
        assert_eq!(step.queries_used, 6);
    }

    #[test]
    fn mezo_linear_matches_replayed_direction() {
        let c = Matrix::from_fn(3, 4, |i, j| (i as f64) - 0.5 * j as f64);
        let cc = c.clone();
        let obj = FnLoss::new((3, 4), move |x: &Matrix, _| cc.inner(x));
        let x = Matrix::zeros(3, 4);
        let cfg = MezoConfig {
            eta: 0.1,
            mu: 0.37,
            n_queries: 1,
        };
        let mut ledger = QueryLedger::new();
        let step = mezo_step(&x, &cfg, &obj, 0, &mut RngStream::new(4, 2), &mut ledger).unwrap();
        let z = gaussian_matrix(&mut RngStream::new(4, 2), 3, 4);
        let expected = z.scale(-0.1 * c.inner(&z));
        assert!(step.x.distance(&expected) < 1e-12);
    }

    #[test]
    fn zo_muon_constant_loss_zero_update() {
        let obj = FnLoss::new((6, 4), |_: &Matrix, _| 0.0);
        let cfg = ZoMuonConfig {
            r: 3,
            nu: 2,
            ..ZoMuonConfig::default()
        };
        let mut sub = SubspaceState::new(6, 3, 2, RngStream::new(1, 1)).unwrap();
        let mut rng = RngStream::new(1, 3);
        let mut ledger = QueryLedger::new();
        let x = Matrix::zeros(6, 4);
        for t in 0..5 {
            let (step, next) = zo_muon_step(&x, &sub, &cfg, &obj, t, &mut rng, &mut ledger).unwrap();
            assert_eq!(step.update_norm, 0.0);
            sub = next;
        }
        assert_eq!(sub.refreshes(), 2);
    }

    #[test]
    fn zo_muon_orthogonal_estimate_is_fixed_point() {
        // with N = 1 and a linear loss, Ĝ = ⟨aᵀC, B⟩B, a rank-one matrix whose
        // polar factor is B/‖B‖_F up to sign
        let mut rng = RngStream::new(8, 0);
        let a = qr_decompose(&gaussian_matrix(&mut rng, 6, 3)).unwrap().q;
        let c = gaussian_matrix(&mut rng, 6, 4);
        let cc = c.clone();
        let obj = FnLoss::new((6, 4), move |x: &Matrix, _| cc.inner(x));
        let sub = SubspaceState::with_basis(a.clone(), 10, RngStream::new(0, 0)).unwrap();
        let cfg = ZoMuonConfig {
            eta: 1.0,
            r: 3,
            n_queries: 1,
            ..ZoMuonConfig::default()
        };
        let x = Matrix::zeros(6, 4);
        let mut ledger = QueryLedger::new();
        let (step, _) = zo_muon_step(&x, &sub, &cfg, &obj, 0, &mut RngStream::new(5, 5), &mut ledger).unwrap();
        let b = gaussian_matrix(&mut RngStream::new(5, 5), 3, 4);
        let g = b.scale(a.t_matmul(&c).inner(&b));
        let polar = crate::spectral::msign_oracle(&g).unwrap();
        let expected = a.matmul(&polar).scale(-1.0);
        assert!(step.x.distance(&expected) < 1e-6, "{}", step.x.distance(&expected));
    }

    #[test]
    fn fo_muon_orthogonal_gradient_beta_zero() {
        let q = qr_decompose(&gaussian_matrix(&mut RngStream::new(3, 0), 5, 5))
            .unwrap()
            .q;
        let x = Matrix::zeros(5, 5);
        let (next, _) = fo_muon_step(&x, &q, 0.1, 0.0, &Matrix::zeros(5, 5), &NewtonSchulz::default()).unwrap();
        assert!(next.distance(&q.scale(-0.1)) < 1e-6);
    }

    #[test]
    fn fo_muon_zero_gradient_guard() {
        let x = Matrix::from_fn(3, 3, |i, j| (i + j) as f64);
        let z = Matrix::zeros(3, 3);
        let (next, mom) = fo_muon_step(&x, &z, 0.1, 0.9, &z, &NewtonSchulz::default()).unwrap();
        assert_eq!(next, x);
        assert_eq!(mom, z);
    }

    #[test]
    fn fo_muon_decreases_quadratic() {
        let obj = MatrixQuadratic::low_rank_target(16, 16, 4, 3.0, 2).unwrap();
        let mut opt = FoMuon::new(
            FoMuonConfig {
                eta: 1e-2,
                ..FoMuonConfig::default()
            },
            (16, 16),
        )
        .unwrap();
        let mut x = Matrix::zeros(16, 16);
        let mut ledger = QueryLedger::new();
        let mut prev = eval_loss(&obj, &x, 0).unwrap();
        for t in 0..100 {
            x = opt.step(&obj, &x, t, &mut ledger).unwrap().x;
            let now = eval_loss(&obj, &x, 0).unwrap();
            assert!(now < prev, "step {t}: {now} >= {prev}");
            prev = now;
        }
        assert_eq!(ledger.count(Phase::Gradient), 100);
    }
}
