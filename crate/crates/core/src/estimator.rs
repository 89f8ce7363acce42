//! Zeroth-order gradient estimators.
//!
//! [`rge_full`] perturbs the whole `m × n` parameter with Gaussian `Z`;
//! [`rge_subspace`] perturbs along `a·B` with a fixed orthonormal `a` (`m × r`)
//! and Gaussian `B` (`r × n`), returning the estimate in the reduced `r × n`
//! space. Both use the antithetic pair `F(x ± μ·dir)` on the same batch and
//! charge exactly `2N` queries to the ledger. Perturbations are regenerated
//! from the stream one at a time and never stored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::{LossFn, Phase, QueryLedger};
use crate::linalg::{gaussian_matrix, qr_decompose, Matrix, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgeConfig {
    /// Smoothing radius μ.
    pub mu: f64,
    /// Perturbations averaged per estimate (N).
    pub n_queries: usize,
}

impl RgeConfig {
    pub fn new(mu: f64, n_queries: usize) -> Result<Self> {
        let cfg = Self { mu, n_queries };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::config(
                "mu",
                format!("must be positive and finite, got {}", self.mu),
            ));
        }
        if self.n_queries == 0 {
            return Err(Error::config("n_queries", "must be at least 1"));
        }
        Ok(())
    }

    /// Objective evaluations consumed by one estimate.
    pub fn queries_per_estimate(&self) -> u64 {
        2 * self.n_queries as u64
    }
}

/// Sampling subspace `a` (`m × r`, orthonormal columns) with its lazy
/// refresh schedule.
#[derive(Clone, Debug)]
pub struct SubspaceState {
    a: Matrix,
    nu: usize,
    steps_since_refresh: usize,
    refreshes: u64,
    rng: RngStream,
}

impl SubspaceState {
    /// Samples the initial basis. That draw counts as the refresh for step 0.
    pub fn new(m: usize, r: usize, nu: usize, mut rng: RngStream) -> Result<Self> {
        if r == 0 || r > m {
            return Err(Error::config("r", format!("need 1 <= r <= m={m}, got {r}")));
        }
        if nu == 0 {
            return Err(Error::config("nu", "refresh interval must be at least 1"));
        }
        let a = sample_basis(m, r, &mut rng)?;
        Ok(Self {
            a,
            nu,
            steps_since_refresh: 0,
            refreshes: 0,
            rng,
        })
    }

    /// Wraps a caller-supplied orthonormal basis.
    pub fn with_basis(a: Matrix, nu: usize, rng: RngStream) -> Result<Self> {
        if a.cols() == 0 || a.cols() > a.rows() || nu == 0 {
            return Err(Error::InvalidArgument(format!(
                "bad subspace basis {:?} or nu={nu}",
                a.shape()
            )));
        }
        let defect = a.orthonormality_defect();
        if defect > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "subspace basis not orthonormal (defect {defect:e})"
            )));
        }
        Ok(Self {
            a,
            nu,
            steps_since_refresh: 0,
            refreshes: 0,
            rng,
        })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn m(&self) -> usize {
        self.a.rows()
    }

    pub fn r(&self) -> usize {
        self.a.cols()
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn steps_since_refresh(&self) -> usize {
        self.steps_since_refresh
    }

    pub fn refreshes(&self) -> u64 {
        self.refreshes
    }

    /// True when the step about to run lands on a multiple of `nu`.
    pub fn refresh_due(&self) -> bool {
        self.steps_since_refresh >= self.nu
    }

    /// Marks one optimizer step as taken on the current basis.
    pub fn advance(&mut self) {
        self.steps_since_refresh += 1;
    }

    /// Resamples `a = QR(gaussian m × r)` and returns the previous basis.
    pub fn refresh(&mut self) -> Result<Matrix> {
        let fresh = sample_basis(self.m(), self.r(), &mut self.rng)?;
        self.steps_since_refresh = 0;
        self.refreshes += 1;
        Ok(std::mem::replace(&mut self.a, fresh))
    }
}

/// Functional form of [`SubspaceState::refresh`].
pub fn refresh_subspace(sub: &SubspaceState) -> Result<(SubspaceState, Matrix)> {
    let mut next = sub.clone();
    let old = next.refresh()?;
    Ok((next, old))
}

fn sample_basis(m: usize, r: usize, rng: &mut RngStream) -> Result<Matrix> {
    match qr_decompose(&gaussian_matrix(rng, m, r)) {
        Ok(f) => Ok(f.q),
        Err(Error::RankDeficient { .. }) => Ok(qr_decompose(&gaussian_matrix(rng, m, r))?.q),
        Err(e) => Err(e),
    }
}

fn finite(value: f64, batch: u64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss { value, batch })
    }
}

/// Antithetic finite difference `(F(x+μd) − F(x−μd)) / 2μ`, two queries.
fn directional_difference<L: LossFn + ?Sized>(
    loss: &L,
    x: &Matrix,
    direction: &Matrix,
    mu: f64,
    batch: u64,
    ledger: &mut QueryLedger,
) -> Result<f64> {
    let plus = ledger.evaluate(Phase::Estimate, loss, &x.added(mu, direction), batch);
    let minus = ledger.evaluate(Phase::Estimate, loss, &x.added(-mu, direction), batch);
    Ok((finite(plus, batch)? - finite(minus, batch)?) / (2.0 * mu))
}

/// Full-space randomized gradient estimate
/// `(1/N) Σᵢ [(F(x+μZⁱ) − F(x−μZⁱ)) / 2μ] Zⁱ`.
pub fn rge_full<L: LossFn + ?Sized>(
    loss: &L,
    x: &Matrix,
    cfg: &RgeConfig,
    batch: u64,
    rng: &mut RngStream,
    ledger: &mut QueryLedger,
) -> Result<Matrix> {
    cfg.validate()?;
    x.check_shape("rge_full parameters", loss.shape())?;
    let (m, n) = x.shape();
    let mut estimate = Matrix::zeros(m, n);
    for _ in 0..cfg.n_queries {
        let z = gaussian_matrix(rng, m, n);
        let d = directional_difference(loss, x, &z, cfg.mu, batch, ledger)?;
        estimate.axpy(d / cfg.n_queries as f64, &z);
    }
    Ok(estimate)
}

/// Subspace randomized gradient estimate in the reduced `r × n` space
/// `(1/N) Σᵢ [(F(x+μ·a·Bⁱ) − F(x−μ·a·Bⁱ)) / 2μ] Bⁱ`.
pub fn rge_subspace<L: LossFn + ?Sized>(
    loss: &L,
    x: &Matrix,
    sub: &SubspaceState,
    cfg: &RgeConfig,
    batch: u64,
    rng: &mut RngStream,
    ledger: &mut QueryLedger,
) -> Result<Matrix> {
    cfg.validate()?;
    x.check_shape("rge_subspace parameters", loss.shape())?;
    if x.rows() != sub.m() {
        return Err(Error::DimensionMismatch {
            context: "rge_subspace basis rows vs parameter rows",
            expected: (x.rows(), sub.r()),
            actual: sub.a().shape(),
        });
    }
    let (r, n) = (sub.r(), x.cols());
    let mut estimate = Matrix::zeros(r, n);
    for _ in 0..cfg.n_queries {
        let b = gaussian_matrix(rng, r, n);
        let direction = sub.a().matmul(&b);
        let d = directional_difference(loss, x, &direction, cfg.mu, batch, ledger)?;
        estimate.axpy(d / cfg.n_queries as f64, &b);
    }
    Ok(estimate)
}

/// Distribution of the smoothing perturbation `U` in `f_μ(x) = E f(x + μU)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Standard Gaussian entries; bias on a quadratic is `μ²·tr(∇²f)/2`.
    Gaussian,
    /// Uniform on the unit Euclidean ball; bias at most `Lμ²/2`.
    UnitBall,
}

fn smoothing_direction(rng: &mut RngStream, m: usize, n: usize, dist: Smoothing) -> Matrix {
    let mut u = gaussian_matrix(rng, m, n);
    if dist == Smoothing::UnitBall {
        let d = (m * n) as f64;
        let radius = rng.uniform().powf(1.0 / d);
        let norm = u.frobenius_norm();
        u.scale_in_place(radius / norm);
    }
    u
}

/// Monte-Carlo estimate of the smoothed objective `f_μ(x)` with its standard
/// error. `mu == 0` evaluates `f(x)` once and reports zero error.
#[allow(clippy::too_many_arguments)]
pub fn smoothed_loss_mc<L: LossFn + ?Sized>(
    loss: &L,
    x: &Matrix,
    mu: f64,
    samples: usize,
    dist: Smoothing,
    batch: u64,
    rng: &mut RngStream,
    ledger: &mut QueryLedger,
) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(Error::InvalidArgument(
            "smoothed_loss_mc needs at least 2 samples".into(),
        ));
    }
    if !(mu >= 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be nonnegative, got {mu}")));
    }
    if mu == 0.0 {
        let v = finite(ledger.evaluate(Phase::Diagnostic, loss, x, batch), batch)?;
        return Ok((v, 0.0));
    }
    let (m, n) = x.shape();
    // Welford accumulation
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..samples {
        let u = smoothing_direction(rng, m, n, dist);
        let v = finite(ledger.evaluate(Phase::Diagnostic, loss, &x.added(mu, &u), batch), batch)?;
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (samples - 1) as f64;
    Ok((mean, (var / samples as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::FnLoss;

    fn quadratic(shape: (usize, usize)) -> FnLoss<impl Fn(&Matrix, u64) -> f64 + Sync> {
        FnLoss::new(shape, |x: &Matrix, _| 0.5 * x.frobenius_norm_sq())
    }

    #[test]
    fn config_validation() {
        assert!(RgeConfig::new(0.0, 1).is_err());
        assert!(RgeConfig::new(1e-3, 0).is_err());
        assert!(RgeConfig::new(f64::NAN, 2).is_err());
        assert_eq!(RgeConfig::new(1e-3, 4).unwrap().queries_per_estimate(), 8);
    }

    #[test]
    fn constant_loss_gives_zero() {
        let loss = FnLoss::new((3, 2), |_: &Matrix, _| 7.0);
        let x = Matrix::zeros(3, 2);
        let cfg = RgeConfig::new(0.1, 5).unwrap();
        let mut rng = RngStream::new(1, 0);
        let mut ledger = QueryLedger::new();
        let g = rge_full(&loss, &x, &cfg, 0, &mut rng, &mut ledger).unwrap();
        assert_eq!(g, Matrix::zeros(3, 2));
        assert_eq!(ledger.total(), 10);

        let sub = SubspaceState::new(3, 2, 10, RngStream::new(1, 1)).unwrap();
        let gs = rge_subspace(&loss, &x, &sub, &cfg, 0, &mut rng, &mut ledger).unwrap();
        assert_eq!(gs, Matrix::zeros(2, 2));
        assert_eq!(ledger.count(Phase::Estimate), 20);
    }

    #[test]
    fn linear_loss_is_exact() {
        let c = Matrix::from_rows(&[[1.0, -2.0, 0.5], [3.0, 0.25, -1.0]]);
        let loss = FnLoss::new((2, 3), |x: &Matrix, _| x.inner(&c));
        let x = Matrix::from_fn(2, 3, |i, j| (i + j) as f64 * 0.1);
        for mu in [1e-4, 1.0, 30.0] {
            let cfg = RgeConfig::new(mu, 1).unwrap();
            let mut rng = RngStream::new(4, 2);
            let mut replay = rng.clone();
            let mut ledger = QueryLedger::new();
            let g = rge_full(&loss, &x, &cfg, 0, &mut rng, &mut ledger).unwrap();
            let z = gaussian_matrix(&mut replay, 2, 3);
            let expected = z.scale(c.inner(&z));
            assert!(g.distance(&expected) < 1e-9 * (1.0 + 1.0 / mu), "mu={mu}");
        }
    }

    #[test]
    fn linear_loss_subspace_pullback() {
        let c = Matrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64).sin());
        let loss = FnLoss::new((5, 3), |x: &Matrix, _| x.inner(&c));
        let x = Matrix::zeros(5, 3);
        let sub = SubspaceState::new(5, 2, 10, RngStream::new(2, 7)).unwrap();
        let cfg = RgeConfig::new(0.01, 1).unwrap();
        let mut rng = RngStream::new(8, 3);
        let mut replay = rng.clone();
        let mut ledger = QueryLedger::new();
        let g = rge_subspace(&loss, &x, &sub, &cfg, 0, &mut rng, &mut ledger).unwrap();
        let b = gaussian_matrix(&mut replay, 2, 3);
        let atc = sub.a().t_matmul(&c);
        let expected = b.scale(atc.inner(&b));
        assert!(g.distance(&expected) < 1e-10);
        assert_eq!(ledger.total(), 2);
    }

    #[test]
    fn quadratic_mean_is_unbiased() {
        let x = Matrix::from_rows(&[[1.0, -0.5, 2.0], [0.3, 0.0, -1.2]]);
        let loss = quadratic((2, 3));
        let cfg = RgeConfig::new(1e-3, 1).unwrap();
        let mut rng = RngStream::new(99, 0);
        let mut ledger = QueryLedger::new();
        let trials = 100_000;
        let mut sum = Matrix::zeros(2, 3);
        let mut sum_sq = Matrix::zeros(2, 3);
        for _ in 0..trials {
            let g = rge_full(&loss, &x, &cfg, 0, &mut rng, &mut ledger).unwrap();
            sum += &g;
            sum_sq += &g.map(|v| v * v);
        }
        for i in 0..2 {
            for j in 0..3 {
                let mean = sum[(i, j)] / trials as f64;
                let var = sum_sq[(i, j)] / trials as f64 - mean * mean;
                let se = (var / trials as f64).sqrt();
                assert!(
                    (mean - x[(i, j)]).abs() <= 3.0 * se,
                    "entry ({i},{j}): {mean} vs {}",
                    x[(i, j)]
                );
            }
        }
        assert_eq!(ledger.total(), 2 * trials as u64);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let loss = FnLoss::new((1, 1), |x: &Matrix, _| if x[(0, 0)] > 0.0 { f64::NAN } else { 0.0 });
        let cfg = RgeConfig::new(0.1, 3).unwrap();
        let mut ledger = QueryLedger::new();
        let err = rge_full(
            &loss,
            &Matrix::zeros(1, 1),
            &cfg,
            4,
            &mut RngStream::new(0, 0),
            &mut ledger,
        );
        assert!(matches!(err, Err(Error::NonFiniteLoss { batch: 4, .. })));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let loss = quadratic((2, 2));
        let cfg = RgeConfig::new(0.1, 1).unwrap();
        let mut ledger = QueryLedger::new();
        let r = rge_full(
            &loss,
            &Matrix::zeros(3, 2),
            &cfg,
            0,
            &mut RngStream::new(0, 0),
            &mut ledger,
        );
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
        assert_eq!(ledger.total(), 0);
    }

    #[test]
    fn refresh_schedule() {
        let mut sub = SubspaceState::new(6, 3, 1, RngStream::new(3, 0)).unwrap();
        assert!(!sub.refresh_due());
        sub.advance();
        assert!(sub.refresh_due());
        let before = sub.a().clone();
        let old = sub.refresh().unwrap();
        assert_eq!(old, before);
        assert_ne!(sub.a(), &before);
        assert!(sub.a().orthonormality_defect() < 1e-10);
        assert_eq!(sub.steps_since_refresh(), 0);

        let s1 = SubspaceState::new(6, 3, 5, RngStream::new(3, 0)).unwrap();
        let s2 = SubspaceState::new(6, 3, 5, RngStream::new(3, 0)).unwrap();
        let (n1, _) = refresh_subspace(&s1).unwrap();
        let (n2, _) = refresh_subspace(&s2).unwrap();
        assert_eq!(n1.a(), n2.a());
        assert!(SubspaceState::new(3, 4, 1, RngStream::new(0, 0)).is_err());
        assert!(SubspaceState::new(3, 2, 0, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn smoothing_zero_radius_is_exact() {
        let loss = quadratic((2, 2));
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let mut ledger = QueryLedger::new();
        let (mean, se) = smoothed_loss_mc(
            &loss,
            &x,
            0.0,
            10,
            Smoothing::Gaussian,
            0,
            &mut RngStream::new(0, 0),
            &mut ledger,
        )
        .unwrap();
        assert_eq!(mean, 15.0);
        assert_eq!(se, 0.0);
        assert_eq!(ledger.count(Phase::Diagnostic), 1);
    }

    #[test]
    fn gaussian_smoothing_bias_on_quadratic() {
        // E‖U‖² = mn for Gaussian U, so f_μ = f + μ²·mn/2
        let loss = quadratic((4, 4));
        let x = Matrix::from_fn(4, 4, |i, j| 0.1 * (i as f64) - 0.05 * (j as f64));
        let f = 0.5 * x.frobenius_norm_sq();
        let mu = 0.1;
        let mut ledger = QueryLedger::new();
        let (mean, se) = smoothed_loss_mc(
            &loss,
            &x,
            mu,
            100_000,
            Smoothing::Gaussian,
            0,
            &mut RngStream::new(7, 0),
            &mut ledger,
        )
        .unwrap();
        let expected = f + 0.08;
        assert!((mean - expected).abs() <= 3.0 * se, "{mean} vs {expected} (se {se})");
    }
}
