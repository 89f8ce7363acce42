//! Query accounting.
//!
//! Every objective evaluation in the library goes through
//! [`QueryLedger::evaluate`], so the ledger is an exact count of what a run
//! consumed. The budget that comparisons are matched on covers the
//! [`Phase::Estimate`] and [`Phase::Gradient`] phases; monitoring and
//! diagnostics are tracked separately and never charged against it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

/// A scalar objective `F(params; batch)`. Must be deterministic for a fixed
/// `(params, batch)` pair.
pub trait LossFn: Sync {
    /// Shape of the parameter matrix.
    fn shape(&self) -> (usize, usize);

    fn loss(&self, params: &Matrix, batch: u64) -> f64;
}

/// Adapts a closure into a [`LossFn`].
pub struct FnLoss<F> {
    shape: (usize, usize),
    f: F,
}

impl<F> FnLoss<F>
where
    F: Fn(&Matrix, u64) -> f64 + Sync,
{
    pub fn new(shape: (usize, usize), f: F) -> Self {
        Self { shape, f }
    }
}

impl<F> LossFn for FnLoss<F>
where
    F: Fn(&Matrix, u64) -> f64 + Sync,
{
    fn shape(&self) -> (usize, usize) {
        self.shape
    }

    fn loss(&self, params: &Matrix, batch: u64) -> f64 {
        (self.f)(params, batch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Zeroth-order gradient estimation.
    Estimate,
    /// Analytic gradient evaluations (first-order reference optimizer).
    Gradient,
    /// Loss recordings made by the harness.
    Monitor,
    /// Anything else: smoothing checks, spectra, finite differences.
    Diagnostic,
}

impl Phase {
    pub fn counts_toward_budget(self) -> bool {
        matches!(self, Phase::Estimate | Phase::Gradient)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QueryLedger {
    total: u64,
    phases: BTreeMap<Phase, u64>,
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn evaluate<L: LossFn + ?Sized>(&mut self, phase: Phase, loss: &L, params: &Matrix, batch: u64) -> f64 {
        self.charge(phase, 1);
        loss.loss(params, batch)
    }

    /// Records `count` queries made outside [`evaluate`](Self::evaluate),
    /// e.g. an analytic gradient call.
    pub fn charge(&mut self, phase: Phase, count: u64) {
        self.total += count;
        *self.phases.entry(phase).or_default() += count;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, phase: Phase) -> u64 {
        self.phases.get(&phase).copied().unwrap_or(0)
    }

    /// Queries charged against an experiment's budget.
    pub fn budget_queries(&self) -> u64 {
        self.phases
            .iter()
            .filter(|(p, _)| p.counts_toward_budget())
            .map(|(_, c)| c)
            .sum()
    }

    pub fn breakdown(&self) -> &BTreeMap<Phase, u64> {
        &self.phases
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant;

    impl LossFn for Constant {
        fn shape(&self) -> (usize, usize) {
            (1, 1)
        }

        fn loss(&self, _: &Matrix, _: u64) -> f64 {
            2.5
        }
    }

    #[test]
    fn totals_match_breakdown() {
        let mut ledger = QueryLedger::new();
        let x = Matrix::zeros(1, 1);
        for _ in 0..3 {
            assert_eq!(ledger.evaluate(Phase::Estimate, &Constant, &x, 0), 2.5);
        }
        ledger.evaluate(Phase::Monitor, &Constant, &x, 0);
        ledger.charge(Phase::Gradient, 2);
        assert_eq!(ledger.total(), 6);
        assert_eq!(ledger.budget_queries(), 5);
        assert_eq!(ledger.count(Phase::Monitor), 1);
        assert_eq!(ledger.breakdown().values().sum::<u64>(), ledger.total());
    }
}
