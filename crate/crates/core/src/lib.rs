// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod harness;
pub mod ledger;
pub mod linalg;
pub mod objectives;
pub mod optimizers;
pub mod selftest;
pub mod spectral;

pub use error::{Error, Result};
pub use ledger::{LossFn, Phase, QueryLedger};
pub use linalg::Matrix;
