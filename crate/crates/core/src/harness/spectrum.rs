use crate::error::Result;
use crate::estimator::{rge_full, rge_subspace, RgeConfig, SubspaceState};
use crate::ledger::QueryLedger;
use crate::linalg::{svd_oracle, Matrix, RngStream};
use crate::objectives::{analytic_gradient, Objective};

/// Spectra below this total count as zero.
const DEGENERATE_MASS: f64 = 1e-12;

/// First- and zeroth-order gradient spectra at one point on one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumReport {
    pub fo_sigma: Vec<f64>,
    pub zo_sigma: Vec<f64>,
    pub tail_mass_fo: f64,
    pub tail_mass_zo: f64,
    /// Singular values counted as head: `ceil(0.1 · min(m, n))`.
    pub k0: usize,
    /// Either spectrum has (numerically) zero total mass.
    pub degenerate: bool,
    /// Objective evaluations spent on the zeroth-order estimate.
    pub queries: u64,
}

/// `Σ_{i ≥ k0} σᵢ / Σᵢ σᵢ` over a descending spectrum; zero for a zero
/// spectrum.
pub fn tail_mass(sigma: &[f64], k0: usize) -> f64 {
    let total: f64 = sigma.iter().sum();
    if total <= DEGENERATE_MASS {
        return 0.0;
    }
    sigma.iter().skip(k0).sum::<f64>() / total
}

/// Compares the spectrum of the exact gradient with that of a zeroth-order
/// estimate at the same point and batch: `a·Ĝ` from the subspace estimator
/// when `sub` is given, the full-space estimate otherwise.
pub fn spectrum_report<O: Objective + ?Sized>(
    obj: &O,
    params: &Matrix,
    batch: u64,
    sub: Option<&SubspaceState>,
    cfg: &RgeConfig,
    rng: &mut RngStream,
) -> Result<SpectrumReport> {
    let fo = analytic_gradient(obj, params, batch)?;
    let mut ledger = QueryLedger::new();
    let zo = match sub {
        Some(sub) => sub
            .a()
            .matmul(&rge_subspace(obj, params, sub, cfg, batch, rng, &mut ledger)?),
        None => rge_full(obj, params, cfg, batch, rng, &mut ledger)?,
    };
    let fo_sigma = svd_oracle(&fo)?.sigma;
    let zo_sigma = svd_oracle(&zo)?.sigma;
    let (m, n) = params.shape();
    let k0 = (m.min(n) as f64 * 0.1).ceil() as usize;
    let degenerate = [&fo_sigma, &zo_sigma]
        .iter()
        .any(|s| s.iter().sum::<f64>() <= DEGENERATE_MASS);
    Ok(SpectrumReport {
        tail_mass_fo: tail_mass(&fo_sigma, k0),
        tail_mass_zo: tail_mass(&zo_sigma, k0),
        fo_sigma,
        zo_sigma,
        k0,
        degenerate,
        queries: ledger.total(),
    })
}
