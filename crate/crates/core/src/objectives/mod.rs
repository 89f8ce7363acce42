//! Forward-pass test objectives with analytic gradients.
//!
//! Each objective is a [`LossFn`] over a single matrix parameter and also
//! knows its exact mini-batch gradient, which serves as the oracle for the
//! zeroth-order estimators and for [`finite_diff_gradient`].

mod dataset;
mod logistic;
mod mlp;
mod quadratic;

pub use dataset::{Dataset, EVAL_BATCH};
pub use logistic::LogisticTask;
pub use mlp::{MlpLayer, MlpLayerObjective, TinyMlp};
pub use quadratic::MatrixQuadratic;

use crate::error::{Error, Result};
use crate::ledger::{LossFn, Phase, QueryLedger};
use crate::linalg::Matrix;

pub trait Objective: LossFn {
    /// Exact gradient of `loss(params, batch)` with respect to `params`.
    /// Callers guarantee the shape; see [`analytic_gradient`].
    fn gradient(&self, params: &Matrix, batch: u64) -> Matrix;

    /// Lipschitz constant of the gradient, when known in closed form.
    fn smoothness(&self) -> Option<f64> {
        None
    }
}

/// Shape-checked loss evaluation.
pub fn eval_loss<O: LossFn + ?Sized>(obj: &O, params: &Matrix, batch: u64) -> Result<f64> {
    params.check_shape("eval_loss parameters", obj.shape())?;
    Ok(obj.loss(params, batch))
}

/// Shape-checked analytic gradient.
pub fn analytic_gradient<O: Objective + ?Sized>(obj: &O, params: &Matrix, batch: u64) -> Result<Matrix> {
    params.check_shape("analytic_gradient parameters", obj.shape())?;
    Ok(obj.gradient(params, batch))
}

/// Central differences per entry; `2 · rows · cols` diagnostic queries.
pub fn finite_diff_gradient<O: LossFn + ?Sized>(
    obj: &O,
    params: &Matrix,
    batch: u64,
    h: f64,
    ledger: &mut QueryLedger,
) -> Result<Matrix> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    params.check_shape("finite_diff_gradient parameters", obj.shape())?;
    let (m, n) = params.shape();
    let mut grad = Matrix::zeros(m, n);
    let mut probe = params.clone();
    for i in 0..m {
        for j in 0..n {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + h;
            let plus = ledger.evaluate(Phase::Diagnostic, obj, &probe, batch);
            probe[(i, j)] = orig - h;
            let minus = ledger.evaluate(Phase::Diagnostic, obj, &probe, batch);
            probe[(i, j)] = orig;
            for value in [plus, minus] {
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { value, batch });
                }
            }
            grad[(i, j)] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grad)
}
