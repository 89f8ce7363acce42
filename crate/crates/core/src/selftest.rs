//! The acceptance suite.
//!
//! Ten numbered criteria: oracle equivalences, estimator statistics,
//! directional claims on the desk-scale suites, and mechanical invariants.
//! Each returns a [`CriterionOutcome`] carrying the measured values. The
//! suite configurations used by the directional criteria are frozen here.

use std::fmt;
use std::time::{Duration, Instant};

use crate::error::Result;
use crate::estimator::{rge_full, rge_subspace, smoothed_loss_mc, RgeConfig, Smoothing, SubspaceState};
use crate::harness::{
    emit_csv, queries_to_target, read_csv, run_comparison, run_experiment, spectrum_report, ExperimentConfig,
    ExperimentResult, ObjectiveSpec, OptimizerSpec,
};
use crate::ledger::{LossFn, Phase, QueryLedger};
use crate::linalg::{gaussian_matrix, qr_decompose, Matrix, RngStream};
use crate::objectives::{LogisticTask, MatrixQuadratic, Objective};
use crate::optimizers::{MezoConfig, Optimizer, ZoMopi, ZoMopiConfig, ZoMuonConfig};
use crate::spectral::{msign_k_oracle, spi_step, tracking_error_tangent, SpiCache};

#[derive(Clone, Debug)]
pub struct CriterionOutcome {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    /// Whether a failure here fails acceptance. Only the calibrated
    /// efficiency ratios are non-blocking above their hard floor.
    pub blocking: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub limit: Duration,
}

impl fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match (self.passed, self.blocking) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (non-blocking)",
        };
        write!(
            f,
            "[{tag}] criterion {:>2} {} ({:.1}s of {}s): {}",
            self.id,
            self.title,
            self.elapsed.as_secs_f64(),
            self.limit.as_secs(),
            self.detail
        )
    }
}

pub const CRITERIA: [(u8, &str, u64); 10] = [
    (1, "rank-k losslessness", 10),
    (2, "SPI converges to msign_k", 5),
    (3, "SPI contraction and drift tracking", 30),
    (4, "estimator mean and variance", 60),
    (5, "smoothing bias bound", 30),
    (6, "ZO spectral tail", 120),
    (7, "momentum ablation", 120),
    (8, "lazy sampling ablation", 120),
    (9, "queries-to-target efficiency", 300),
    (10, "mechanical invariants", 60),
];

struct Verdict {
    passed: bool,
    blocking: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: String) -> Self {
        Self {
            passed,
            blocking: true,
            detail,
        }
    }
}

/// Runs one criterion by number.
pub fn run_criterion(id: u8) -> Result<CriterionOutcome> {
    let (_, title, limit) = *CRITERIA
        .iter()
        .find(|c| c.0 == id)
        .ok_or_else(|| crate::Error::InvalidArgument(format!("no criterion {id}")))?;
    let start = Instant::now();
    let v = match id {
        1 => losslessness()?,
        2 => spi_convergence()?,
        3 => spi_contraction()?,
        4 => estimator_statistics()?,
        5 => smoothing_bias()?,
        6 => spectral_tail()?,
        7 => momentum_ablation()?,
        8 => lazy_sampling_ablation()?,
        9 => efficiency()?,
        _ => mechanical_invariants()?,
    };
    let elapsed = start.elapsed();
    let limit = Duration::from_secs(limit);
    let in_time = elapsed <= limit;
    let detail = if in_time {
        v.detail
    } else {
        format!("{}; over the time limit", v.detail)
    };
    Ok(CriterionOutcome {
        id,
        title,
        passed: v.passed && in_time,
        blocking: v.blocking || !in_time,
        detail,
        elapsed,
        limit,
    })
}

/// Runs every criterion in order. An error inside a criterion becomes a
/// blocking failure of that criterion.
pub fn run_all() -> Vec<CriterionOutcome> {
    CRITERIA
        .iter()
        .map(|&(id, title, limit)| {
            run_criterion(id).unwrap_or_else(|e| CriterionOutcome {
                id,
                title,
                passed: false,
                blocking: true,
                detail: format!("error: {e}"),
                elapsed: Duration::ZERO,
                limit: Duration::from_secs(limit),
            })
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn orthonormal(rng: &mut RngStream, rows: usize, cols: usize) -> Result<Matrix> {
    Ok(qr_decompose(&gaussian_matrix(rng, rows, cols))?.q)
}

fn losslessness() -> Result<Verdict> {
    const K: usize = 8;
    let mut rng = RngStream::new(0xc1, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = orthonormal(&mut rng, 64, 16)?;
        let mt = gaussian_matrix(&mut rng, 16, 48);
        let lhs = a.matmul(&msign_k_oracle(&a.t_matmul(&a).matmul(&mt), K)?);
        let rhs = msign_k_oracle(&a.matmul(&mt), K)?;
        worst = worst.max(lhs.distance(&rhs));
    }
    Ok(Verdict::new(
        worst <= 1e-8,
        format!("max defect {worst:.2e} over 100 draws (limit 1e-8)"),
    ))
}

/// `u·diag(sigma)·v[:, :p]ᵀ` together with the full right basis `v`.
struct Planted {
    m: Matrix,
    u: Matrix,
    sigma: Vec<f64>,
    v: Matrix,
}

impl Planted {
    fn new(rng: &mut RngStream, rows: usize, cols: usize, sigma: Vec<f64>) -> Result<Self> {
        let u = orthonormal(rng, rows, sigma.len())?;
        let v = orthonormal(rng, cols, cols)?;
        let mut p = Self {
            m: Matrix::zeros(rows, cols),
            u,
            sigma,
            v,
        };
        p.rebuild();
        Ok(p)
    }

    fn rebuild(&mut self) {
        let p = self.sigma.len();
        let mut us = self.u.clone();
        for j in 0..p {
            for i in 0..us.rows() {
                us[(i, j)] *= self.sigma[j];
            }
        }
        self.m = us.matmul_t(&self.v.columns(0, p));
    }

    fn error(&self, cache: &SpiCache) -> Result<f64> {
        let (n, k) = (self.v.rows(), cache.k());
        tracking_error_tangent(cache.v(), &self.v.columns(0, k), &self.v.columns(k, n))
    }

    /// Rotates right singular vector `i` towards `k + i` by `angle`, for
    /// each `i < k`.
    fn drift(&mut self, k: usize, angle: f64) {
        let (c, s) = (angle.cos(), angle.sin());
        for i in 0..k {
            let (a, b) = (self.v.column(i), self.v.column(k + i));
            let new_a: Vec<f64> = a.iter().zip(&b).map(|(x, y)| c * x + s * y).collect();
            let new_b: Vec<f64> = a.iter().zip(&b).map(|(x, y)| -s * x + c * y).collect();
            self.v.set_column(i, &new_a);
            self.v.set_column(k + i, &new_b);
        }
        self.rebuild();
    }
}

const SPI_K: usize = 4;
const SPI_GAMMA: f64 = 0.25;

/// 32 singular values with `(σ₅/σ₄)² = 0.25` and distinct leading values.
fn planted_spectrum() -> Vec<f64> {
    let mut s = vec![2.0, 1.6, 1.3, 1.0];
    s.extend((0..28).map(|i| 0.5 * 0.95f64.powi(i)));
    s
}

fn spi_convergence() -> Result<Verdict> {
    let mut rng = RngStream::new(0xc2, 0);
    let planted = Planted::new(&mut rng, 32, 48, planted_spectrum())?;
    let oracle = msign_k_oracle(&planted.m, SPI_K)?;
    let mut worst = 0.0f64;
    let mut ok = 0;
    for start in 0..20 {
        let mut rng = RngStream::new(0xc2, 1 + start);
        let mut cache = SpiCache::cold_start(48, SPI_K, &mut rng)?;
        let mut o = Matrix::zeros(32, 48);
        for _ in 0..50 {
            let (out, next) = spi_step(&planted.m, &cache, &mut rng)?;
            o = out.o;
            cache = next;
        }
        let err = o.distance(&oracle);
        worst = worst.max(err);
        ok += usize::from(err <= 1e-6);
    }
    Ok(Verdict::new(
        ok == 20,
        format!("{ok}/20 starts within 1e-6, worst {worst:.2e}"),
    ))
}

fn spi_contraction() -> Result<Verdict> {
    // numerical floor below which step ratios are rounding noise
    const FLOOR: f64 = 1e-10;
    let mut rng = RngStream::new(0xc3, 0);
    let planted = Planted::new(&mut rng, 32, 48, planted_spectrum())?;
    let mut worst_ratio = 0.0f64;
    let mut checked = 0;
    for start in 0..20 {
        let mut rng = RngStream::new(0xc3, 1 + start);
        let mut cache = SpiCache::cold_start(48, SPI_K, &mut rng)?;
        let mut prev = planted.error(&cache)?;
        let mut steps = 0;
        while steps < 30 {
            cache = spi_step(&planted.m, &cache, &mut rng)?.1;
            let err = planted.error(&cache)?;
            if prev < 0.5 {
                if prev > FLOOR {
                    worst_ratio = worst_ratio.max(err / prev);
                    checked += 1;
                }
                steps += 1;
            }
            prev = err;
        }
    }
    let static_ok = worst_ratio <= SPI_GAMMA + 0.02;

    let delta = 0.01;
    let bound = 2.0 * SPI_GAMMA * delta / (1.0 - SPI_GAMMA);
    let mut worst_steady = 0.0f64;
    for seed in 0..10 {
        let mut rng = RngStream::new(0xc3d, seed);
        let mut planted = Planted::new(&mut rng, 32, 48, planted_spectrum())?;
        let mut cache = SpiCache::cold_start(48, SPI_K, &mut rng)?;
        for t in 0..300 {
            planted.drift(SPI_K, delta);
            cache = spi_step(&planted.m, &cache, &mut rng)?.1;
            if t >= 200 {
                worst_steady = worst_steady.max(planted.error(&cache)?);
            }
        }
    }
    let drift_ok = worst_steady <= bound;
    Ok(Verdict::new(
        static_ok && drift_ok,
        format!(
            "static: worst step ratio {worst_ratio:.4} over {checked} steps (limit {:.2}); \
             drift: worst steady error {worst_steady:.5} (limit {bound:.5})",
            SPI_GAMMA + 0.02
        ),
    ))
}

fn estimator_statistics() -> Result<Verdict> {
    // Mean: 10⁵ single-query estimates; on a quadratic the central
    // difference is exact, so the estimator mean is the gradient itself.
    let mut rng = RngStream::new(0xc4, 0);
    let h = MatrixQuadratic::diagonal_hessian(4, 10.0)?;
    let q = MatrixQuadratic::new(gaussian_matrix(&mut rng, 4, 3), h, 0.0, 0)?;
    let x = gaussian_matrix(&mut rng, 4, 3);
    let g = q.gradient(&x, 0);
    let cfg = RgeConfig::new(1e-3, 1)?;
    let mut ledger = QueryLedger::new();
    const SAMPLES: usize = 100_000;
    let mut mean = Matrix::zeros(4, 3);
    let mut m2 = Matrix::zeros(4, 3);
    for i in 0..SAMPLES {
        let est = rge_full(&q, &x, &cfg, 0, &mut rng, &mut ledger)?;
        for (j, &v) in est.as_slice().iter().enumerate() {
            let d = v - mean.as_slice()[j];
            mean.as_mut_slice()[j] += d / (i + 1) as f64;
            m2.as_mut_slice()[j] += d * (v - mean.as_slice()[j]);
        }
    }
    let mut worst_z = 0.0f64;
    for j in 0..12 {
        let se = (m2.as_slice()[j] / (SAMPLES - 1) as f64 / SAMPLES as f64).sqrt();
        worst_z = worst_z.max((mean.as_slice()[j] - g.as_slice()[j]).abs() / se);
    }

    let (m, r) = (256, 16);
    let ratio = in_span_variance_ratio(m, 4, r, 10_000, 0xc4)?;
    let slack = ratio / (r as f64 / m as f64);
    let var_ok = (0.5..=2.0).contains(&slack);
    Ok(Verdict::new(
        worst_z <= 3.0 && var_ok,
        format!(
            "mean: worst |z| {worst_z:.2} over 12 entries (limit 3); in-span variance ratio {ratio:.4} vs \
             r/m = {:.4} (slack {slack:.2}, allowed [0.5, 2])",
            r as f64 / m as f64
        ),
    ))
}

/// Mean per-entry variance of the subspace estimate `Ĝ` (the coordinates of
/// `a·Ĝ` in span(a)) divided by that of `aᵀ·Ĝ_full`, over `trials` single-query
/// estimates on an isotropic `m × n` quadratic.
pub fn in_span_variance_ratio(m: usize, n: usize, r: usize, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = RngStream::new(seed, 0x7a);
    let q = MatrixQuadratic::isotropic(gaussian_matrix(&mut rng, m, n));
    let x = gaussian_matrix(&mut rng, m, n);
    let sub = SubspaceState::new(m, r, 1, rng.split(7))?;
    let cfg = RgeConfig::new(1e-3, 1)?;
    let mut ledger = QueryLedger::new();
    let per_entry_variance = |samples: &[Matrix]| {
        let count = samples.len() as f64;
        let mut mean = Matrix::zeros(r, n);
        for s in samples {
            mean.axpy(1.0 / count, s);
        }
        let ss: f64 = samples.iter().map(|s| s.distance(&mean).powi(2)).sum();
        ss / (count - 1.0) / (r * n) as f64
    };
    let mut full = Vec::with_capacity(trials);
    let mut reduced = Vec::with_capacity(trials);
    for _ in 0..trials {
        full.push(sub.a().t_matmul(&rge_full(&q, &x, &cfg, 0, &mut rng, &mut ledger)?));
        reduced.push(rge_subspace(&q, &x, &sub, &cfg, 0, &mut rng, &mut ledger)?);
    }
    Ok(per_entry_variance(&reduced) / per_entry_variance(&full))
}

fn smoothing_bias() -> Result<Verdict> {
    let mut rng = RngStream::new(0xc5, 0);
    let h = MatrixQuadratic::diagonal_hessian(6, 4.0)?;
    let q = MatrixQuadratic::new(gaussian_matrix(&mut rng, 6, 4), h, 0.0, 0)?;
    let l = q.lambda_max();
    let x = gaussian_matrix(&mut rng, 6, 4);
    let f = q.loss(&x, 0);
    let mut ledger = QueryLedger::new();
    let mut ok = true;
    let mut parts = Vec::new();
    for mu in [0.01, 0.1] {
        let (f_mu, se) = smoothed_loss_mc(&q, &x, mu, 20_000, Smoothing::UnitBall, 0, &mut rng, &mut ledger)?;
        let bias = (f_mu - f).abs();
        let bound = l * mu * mu / 2.0;
        ok &= bias <= bound + 3.0 * se;
        parts.push(format!(
            "mu={mu}: |f_mu - f| {bias:.2e} vs L*mu^2/2 {bound:.2e} + 3se {:.2e}",
            3.0 * se
        ));
    }
    Ok(Verdict::new(ok, parts.join("; ")))
}

fn spectral_tail() -> Result<Verdict> {
    const NS: [usize; 3] = [4, 64, 1024];
    let mut heavier = 0;
    let mut gaps: Vec<Vec<f64>> = vec![Vec::new(); NS.len()];
    let mut monotone_seeds = 0;
    for seed in 0..10u64 {
        let task = LogisticTask::synthetic(seed)?;
        let mut rng = RngStream::new(0xc6, seed);
        let x = gaussian_matrix(&mut rng, 128, 8).scale(1.0 / (128f64).sqrt());
        let mut seed_gaps = Vec::new();
        for (i, &n) in NS.iter().enumerate() {
            let mut est_rng = rng.split(n as u64);
            let rep = spectrum_report(&task, &x, 0, None, &RgeConfig::new(1e-3, n)?, &mut est_rng)?;
            let gap = rep.tail_mass_zo - rep.tail_mass_fo;
            if n == 4 && gap > 0.0 {
                heavier += 1;
            }
            gaps[i].push(gap);
            seed_gaps.push(gap);
        }
        monotone_seeds += usize::from(seed_gaps.windows(2).all(|w| w[1] < w[0]));
    }
    let med: Vec<f64> = gaps.into_iter().map(median).collect();
    let monotone = med.windows(2).all(|w| w[1] < w[0]);
    Ok(Verdict::new(
        heavier >= 9 && monotone,
        format!(
            "tail_zo > tail_fo in {heavier}/10 seeds at N=4; median gap {:.3} > {:.3} > {:.3} for N = 4, 64, 1024 \
             (monotone in {monotone_seeds}/10 seeds)",
            med[0], med[1], med[2]
        ),
    ))
}

/// Seed offset for the suite objectives.
const SUITE_SEED: u64 = 1000;
const SUITE_SEEDS: std::ops::Range<u64> = 0..10;

/// 64×64 isotropic quadratic with a rank-2 optimum of Frobenius norm 5,
/// started from zero.
pub fn quadratic_suite_objective() -> ObjectiveSpec {
    ObjectiveSpec::Quadratic {
        m: 64,
        n: 64,
        rank: 2,
        scale: 5.0,
        condition: 1.0,
        rotated: false,
        noise_scale: 0.0,
        seed: SUITE_SEED,
    }
}

/// The default 128×8 synthetic logistic task.
pub fn logistic_suite_objective() -> ObjectiveSpec {
    let dataset = crate::harness::DatasetSpec {
        seed: SUITE_SEED,
        ..Default::default()
    };
    ObjectiveSpec::Logistic { dataset, l2: 1e-4 }
}

/// ZO-MOPI setting shared by the two ablations.
pub fn ablation_config() -> ZoMopiConfig {
    ZoMopiConfig {
        eta: 0.01,
        beta: 0.9,
        r: 16,
        k: 8,
        nu: 100,
        n_queries: 4,
        ..Default::default()
    }
}

pub const ABLATION_BUDGET: u64 = 8000;

/// Frozen per-suite settings for the efficiency comparison:
/// `([zo-mopi, zo-muon, mezo], budget, eval_every)`.
pub fn efficiency_suite(logistic: bool) -> ([OptimizerSpec; 3], u64, u64) {
    if logistic {
        (
            [
                OptimizerSpec::ZoMopi(ZoMopiConfig {
                    eta: 0.03,
                    beta: 0.5,
                    r: 64,
                    k: 8,
                    nu: 100,
                    n_queries: 4,
                    ..Default::default()
                }),
                OptimizerSpec::ZoMuon(ZoMuonConfig {
                    eta: 0.04,
                    r: 64,
                    nu: 100,
                    n_queries: 4,
                    ..Default::default()
                }),
                OptimizerSpec::Mezo(MezoConfig {
                    eta: 8e-3,
                    mu: 1e-3,
                    n_queries: 4,
                }),
            ],
            32_000,
            40,
        )
    } else {
        (
            [
                OptimizerSpec::ZoMopi(ZoMopiConfig {
                    eta: 0.02,
                    beta: 0.99,
                    r: 64,
                    k: 2,
                    nu: 100,
                    n_queries: 16,
                    ..Default::default()
                }),
                OptimizerSpec::ZoMuon(ZoMuonConfig {
                    eta: 0.02,
                    r: 32,
                    nu: 100,
                    n_queries: 8,
                    ..Default::default()
                }),
                OptimizerSpec::Mezo(MezoConfig {
                    eta: 1e-3,
                    mu: 1e-3,
                    n_queries: 4,
                }),
            ],
            16_000,
            1,
        )
    }
}

fn suite_config(objective: ObjectiveSpec, optimizer: OptimizerSpec, budget: u64, eval_every: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(objective, optimizer, budget, SUITE_SEEDS.collect());
    cfg.eval_every = eval_every;
    cfg.record_wall_time = false;
    cfg
}

/// Runs the configurations as one comparison; any failed seed is an error.
fn suite_runs(cfgs: &[ExperimentConfig]) -> Result<Vec<ExperimentResult>> {
    let results = run_comparison(cfgs)?;
    for res in &results {
        if let Some(t) = res.trials.iter().find(|t| !t.succeeded()) {
            return Err(crate::Error::InvalidArgument(format!(
                "{} seed {} failed: {:?}",
                res.method(),
                t.seed,
                t.status
            )));
        }
    }
    Ok(results)
}

fn final_losses(res: &ExperimentResult) -> Vec<f64> {
    res.trials.iter().map(|t| t.final_record().eval_loss).collect()
}

fn momentum_ablation() -> Result<Verdict> {
    let with = ablation_config();
    let without = ZoMopiConfig { beta: 0.0, ..with };
    let runs = suite_runs(&[with, without].map(|c| {
        suite_config(
            quadratic_suite_objective(),
            OptimizerSpec::ZoMopi(c),
            ABLATION_BUDGET,
            100,
        )
    }))?;
    let (a, b) = (final_losses(&runs[0]), final_losses(&runs[1]));
    let wins = a.iter().zip(&b).filter(|(x, y)| x < y).count();
    let (ma, mb) = (median(a), median(b));
    Ok(Verdict::new(
        ma < mb,
        format!("median final loss {ma:.4} (beta 0.9) vs {mb:.4} (beta 0); lower in {wins}/10 seeds"),
    ))
}

fn lazy_sampling_ablation() -> Result<Verdict> {
    let lazy = ablation_config();
    let eager = ZoMopiConfig { nu: 1, ..lazy };
    let runs = suite_runs(&[lazy, eager].map(|c| {
        suite_config(
            quadratic_suite_objective(),
            OptimizerSpec::ZoMopi(c),
            ABLATION_BUDGET,
            100,
        )
    }))?;
    let (a, b) = (final_losses(&runs[0]), final_losses(&runs[1]));
    let wins = a.iter().zip(&b).filter(|(x, y)| x <= y).count();
    let (ma, mb) = (median(a), median(b));
    Ok(Verdict::new(
        ma <= mb,
        format!("median final loss {ma:.4} (nu 100) vs {mb:.4} (nu 1); no worse in {wins}/10 seeds"),
    ))
}

/// Median over seeds of `q_mopi / q_other`, where each seed's target is the
/// worst final eval loss among the three methods.
fn efficiency_ratios(results: &[ExperimentResult]) -> (f64, f64) {
    let (mut vs_muon, mut vs_mezo) = (Vec::new(), Vec::new());
    for i in 0..results[0].trials.len() {
        let trials: Vec<_> = results.iter().map(|r| &r.trials[i]).collect();
        let target = trials
            .iter()
            .map(|t| t.final_record().eval_loss)
            .fold(f64::MIN, f64::max);
        let q: Vec<f64> = trials
            .iter()
            .map(|t| queries_to_target(&t.records, target).expect("final record meets the target") as f64)
            .collect();
        vs_muon.push(q[0] / q[1]);
        vs_mezo.push(q[0] / q[2]);
    }
    (median(vs_muon), median(vs_mezo))
}

pub const RATIO_VS_MUON: f64 = 0.8;
pub const RATIO_VS_MEZO: f64 = 0.6;

fn efficiency() -> Result<Verdict> {
    let mut passed = true;
    let mut floor_held = true;
    let mut parts = Vec::new();
    for (name, logistic) in [("quadratic", false), ("logistic", true)] {
        let objective = if logistic {
            logistic_suite_objective()
        } else {
            quadratic_suite_objective()
        };
        let (methods, budget, eval_every) = efficiency_suite(logistic);
        let runs = suite_runs(&methods.map(|m| suite_config(objective.clone(), m, budget, eval_every)))?;
        let (muon, mezo) = efficiency_ratios(&runs);
        passed &= muon <= RATIO_VS_MUON && mezo <= RATIO_VS_MEZO;
        floor_held &= muon < 1.0;
        parts.push(format!("{name}: {muon:.3} of zo-muon, {mezo:.3} of mezo"));
    }
    Ok(Verdict {
        passed,
        blocking: !floor_held,
        detail: format!(
            "median queries-to-target ratios {} (limits {RATIO_VS_MUON}, {RATIO_VS_MEZO}; hard floor 1.0 vs zo-muon {})",
            parts.join("; "),
            if floor_held { "held" } else { "broken" }
        ),
    })
}

fn mechanical_invariants() -> Result<Verdict> {
    let mut failures = Vec::new();

    // update-norm law
    let q = MatrixQuadratic::low_rank_target(64, 64, 2, 5.0, 7)?;
    let cfg = ZoMopiConfig {
        eta: 0.01,
        r: 16,
        k: 8,
        nu: 10,
        ..Default::default()
    };
    let mut opt = ZoMopi::new(cfg, (64, 64), 3)?;
    let mut x = Matrix::zeros(64, 64);
    let mut ledger = QueryLedger::new();
    let want = cfg.eta * (cfg.k as f64).sqrt();
    let mut worst_norm = 0.0f64;
    for t in 0..50 {
        let out = opt.step(&q, &x, t, &mut ledger)?;
        if out.diagnostics.get("spi_degenerate_columns").copied().unwrap_or(0.0) == 0.0 {
            worst_norm = worst_norm.max((out.update_norm - want).abs());
        } else {
            failures.push(format!("degenerate SPI columns at step {t}"));
        }
        x = out.x;
    }
    if worst_norm > 1e-8 {
        failures.push(format!("update norm off by {worst_norm:.2e}"));
    }
    if ledger.budget_queries() != 50 * 8 || ledger.total() != ledger.count(Phase::Estimate) {
        failures.push("ledger does not show exactly 2N estimate queries per step".into());
    }

    // ledger audit, determinism and CSV round trip on every method
    let dir = std::env::temp_dir().join(format!("zomopi-selftest-{}", std::process::id()));
    let budget = 960;
    for method in [
        OptimizerSpec::ZoMopi(ZoMopiConfig {
            r: 16,
            k: 4,
            nu: 20,
            n_queries: 4,
            ..Default::default()
        }),
        OptimizerSpec::ZoMuon(ZoMuonConfig {
            r: 16,
            nu: 20,
            n_queries: 6,
            ..Default::default()
        }),
        OptimizerSpec::Mezo(MezoConfig {
            eta: 1e-3,
            n_queries: 2,
            ..Default::default()
        }),
    ] {
        let mut cfg = ExperimentConfig::new(quadratic_suite_objective(), method, budget, vec![0, 1]);
        cfg.eval_every = 7;
        cfg.record_wall_time = false;
        let per_step = method.queries_per_step();
        let first = run_experiment(&cfg)?;
        let second = run_experiment(&cfg)?;
        for t in &first.trials {
            let last = t.final_record();
            if last.queries != budget || t.ledger.budget_queries() != budget {
                failures.push(format!(
                    "{} seed {}: final queries {} != budget",
                    method.name(),
                    t.seed,
                    last.queries
                ));
            }
            if t.records.iter().any(|r| r.queries != r.step * per_step) {
                failures.push(format!("{} seed {}: queries not 2N per step", method.name(), t.seed));
            }
        }
        let (da, db) = (dir.join("a"), dir.join("b"));
        let fa = first.write(&da)?;
        let fb = second.write(&db)?;
        for (pa, pb) in fa.iter().zip(&fb) {
            let same = std::fs::read(pa).map_err(|e| crate::Error::Io {
                path: pa.clone(),
                source: e,
            })? == std::fs::read(pb).map_err(|e| crate::Error::Io {
                path: pb.clone(),
                source: e,
            })?;
            if !same {
                failures.push(format!("{} differs between identical runs", pa.display()));
            }
        }
        for t in &first.trials {
            let path = da.join(first.trajectory_file_name(t.seed));
            if read_csv(&path)? != t.records {
                failures.push(format!("{} does not round-trip", path.display()));
            }
        }
    }
    let probe = dir.join("extremes.csv");
    let extremes: Vec<_> = [f64::MIN_POSITIVE, 1.0 / 3.0, f64::MAX, -0.0, 5e-324]
        .iter()
        .enumerate()
        .map(|(i, &v)| crate::harness::TrajectoryRecord {
            step: i as u64,
            queries: i as u64 + 1,
            train_loss: v,
            eval_loss: -v,
            update_norm: v * 0.5,
            wall_ms: 0.0,
            spi_error: Some(v),
        })
        .collect();
    emit_csv(&extremes, &probe)?;
    let back = read_csv(&probe)?;
    let bitwise = back.iter().zip(&extremes).all(|(a, b)| {
        a.train_loss.to_bits() == b.train_loss.to_bits()
            && a.eval_loss.to_bits() == b.eval_loss.to_bits()
            && a.spi_error.map(f64::to_bits) == b.spi_error.map(f64::to_bits)
    });
    if !bitwise {
        failures.push("extreme values do not round-trip bitwise".into());
    }
    let _ = std::fs::remove_dir_all(&dir);

    let detail = if failures.is_empty() {
        format!(
            "update norm within {worst_norm:.1e} of eta*sqrt(k); ledgers exact; reruns byte-identical; CSV round-trips"
        )
    } else {
        failures.join("; ")
    };
    Ok(Verdict::new(failures.is_empty(), detail))
}
