//! Optimizer state machines.
//!
//! Each method exists twice: as a free step function over explicit state
//! (the form the tests drive) and as an [`Optimizer`] that owns its state
//! and is driven by the harness one step at a time.

mod baselines;
mod zo_mopi;

use std::collections::BTreeMap;

pub use baselines::{
    fo_muon_step, mezo_step, zo_muon_step, FoMuon, FoMuonConfig, Mezo, MezoConfig, NsFlavor, ZoMuon, ZoMuonConfig,
};
pub use zo_mopi::{
    project_momentum, zo_mopi_step, MomentumState, Orthogonalizer, ProjectionScale, ZoMopi, ZoMopiConfig, ZoMopiState,
};

use crate::error::Result;
use crate::ledger::QueryLedger;
use crate::linalg::Matrix;
use crate::objectives::Objective;

/// Result of one optimizer step.
#[derive(Clone, Debug)]
pub struct OptimizerStep {
    pub x: Matrix,
    /// `‖x' − x‖_F`.
    pub update_norm: f64,
    /// Budget-charged queries consumed by this step.
    pub queries_used: u64,
    pub diagnostics: BTreeMap<&'static str, f64>,
}

impl OptimizerStep {
    fn new(x_old: &Matrix, x: Matrix, queries_used: u64) -> Self {
        Self {
            update_norm: x.distance(x_old),
            x,
            queries_used,
            diagnostics: BTreeMap::new(),
        }
    }
}

/// Stateful optimizer over a single matrix parameter.
pub trait Optimizer: Send {
    fn name(&self) -> &'static str;

    /// Budget-charged queries per call to [`step`](Self::step).
    fn queries_per_step(&self) -> u64;

    fn step(&mut self, obj: &dyn Objective, x: &Matrix, batch: u64, ledger: &mut QueryLedger) -> Result<OptimizerStep>;
}
