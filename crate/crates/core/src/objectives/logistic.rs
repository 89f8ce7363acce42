use super::{Dataset, Objective};
use crate::error::Result;
use crate::ledger::LossFn;
use crate::linalg::Matrix;

/// Multinomial logistic regression with a `d × C` weight matrix:
/// mean cross-entropy of `softmax(xᵀW)` over the batch plus `½·l2·‖W‖²_F`.
#[derive(Clone, Debug)]
pub struct LogisticTask {
    data: Dataset,
    l2: f64,
}

impl LogisticTask {
    pub const DEFAULT_DIM: usize = 128;
    pub const DEFAULT_CLASSES: usize = 8;
    pub const DEFAULT_EXAMPLES: usize = 1024;
    pub const DEFAULT_BATCH: usize = 16;

    pub fn new(data: Dataset, l2: f64) -> Self {
        Self { data, l2: l2.max(0.0) }
    }

    /// 128-dimensional, 8-class synthetic task with 1024 examples (256 held
    /// out) and batches of 16.
    pub fn synthetic(seed: u64) -> Result<Self> {
        let data = Dataset::synthetic(
            Self::DEFAULT_EXAMPLES,
            Self::DEFAULT_DIM,
            Self::DEFAULT_CLASSES,
            16,
            1.0,
            1.0,
            Self::DEFAULT_EXAMPLES / 4,
            Self::DEFAULT_BATCH,
            seed,
        )?;
        Ok(Self::new(data, 1e-4))
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }
}

/// Selected rows of the feature matrix.
pub(super) fn gather_rows(features: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), features.cols(), |i, j| features[(idx[i], j)])
}

/// Mean cross-entropy of row-wise softmax(logits) and, when requested, its
/// gradient with respect to the logits (`(P − Y)/b`).
pub(super) fn softmax_cross_entropy(logits: &Matrix, labels: &[usize], want_grad: bool) -> (f64, Option<Matrix>) {
    let (b, c) = logits.shape();
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Matrix::zeros(b, c));
    let mut probs = vec![0.0; c];
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (p, &l) in probs.iter_mut().zip(row) {
            *p = (l - max).exp();
            z += *p;
        }
        total += z.ln() + max - row[label];
        if let Some(g) = grad.as_mut() {
            for j in 0..c {
                let y = if j == label { 1.0 } else { 0.0 };
                g[(i, j)] = (probs[j] / z - y) / b as f64;
            }
        }
    }
    (total / b as f64, grad)
}

impl LossFn for LogisticTask {
    fn shape(&self) -> (usize, usize) {
        (self.data.dim(), self.data.classes())
    }

    fn loss(&self, params: &Matrix, batch: u64) -> f64 {
        let idx = self.data.batch_indices(batch);
        let x = gather_rows(self.data.features(), &idx);
        let labels: Vec<usize> = idx.iter().map(|&i| self.data.labels()[i]).collect();
        let (ce, _) = softmax_cross_entropy(&x.matmul(params), &labels, false);
        ce + 0.5 * self.l2 * params.frobenius_norm_sq()
    }
}

impl Objective for LogisticTask {
    fn gradient(&self, params: &Matrix, batch: u64) -> Matrix {
        let idx = self.data.batch_indices(batch);
        let x = gather_rows(self.data.features(), &idx);
        let labels: Vec<usize> = idx.iter().map(|&i| self.data.labels()[i]).collect();
        let (_, dlogits) = softmax_cross_entropy(&x.matmul(params), &labels, true);
        let mut g = x.t_matmul(&dlogits.expect("requested"));
        g.axpy(self.l2, params);
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::QueryLedger;
    use crate::linalg::{gaussian_matrix, RngStream};
    use crate::objectives::{finite_diff_gradient, EVAL_BATCH};

    fn tiny() -> LogisticTask {
        let data = Dataset::synthetic(40, 6, 4, 3, 1.5, 0.7, 8, 8, 11).unwrap();
        LogisticTask::new(data, 0.01)
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let task = LogisticTask::synthetic(0).unwrap();
        let w = Matrix::zeros(128, 8);
        for batch in [0, 7, EVAL_BATCH] {
            assert!((task.loss(&w, batch) - 8f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_columns_sum_to_zero_at_uniformity() {
        let task = tiny();
        let g = task.gradient(&Matrix::zeros(6, 4), 2);
        for i in 0..6 {
            assert!(g.row(i).iter().sum::<f64>().abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let task = tiny();
        let mut rng = RngStream::new(5, 0);
        let mut ledger = QueryLedger::new();
        for point in 0..5 {
            let w = gaussian_matrix(&mut rng, 6, 4).scale(0.5);
            let g = task.gradient(&w, point);
            let fd = finite_diff_gradient(&task, &w, point, 1e-5, &mut ledger).unwrap();
            for (a, b) in g.as_slice().iter().zip(fd.as_slice()) {
                assert!((a - b).abs() <= 1e-4 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn richardson_ratio() {
        let task = tiny();
        let w = gaussian_matrix(&mut RngStream::new(8, 0), 6, 4);
        let g = task.gradient(&w, 0);
        let mut ledger = QueryLedger::new();
        let e1 = finite_diff_gradient(&task, &w, 0, 1e-2, &mut ledger)
            .unwrap()
            .distance(&g);
        let e2 = finite_diff_gradient(&task, &w, 0, 1e-3, &mut ledger)
            .unwrap()
            .distance(&g);
        let ratio = e1 / e2;
        assert!((70.0..130.0).contains(&ratio), "ratio {ratio}");
    }
}
