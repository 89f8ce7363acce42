use super::{Objective, EVAL_BATCH};
use crate::error::{Error, Result};
use crate::ledger::LossFn;
use crate::linalg::{gaussian_matrix, qr_decompose, svd_oracle, Matrix, RngStream};

#[derive(Clone, Debug, PartialEq)]
enum Hessian {
    Identity,
    Diagonal(Vec<f64>),
    Dense,
}

/// `F(X; ξ) = ½ tr((X − X★)ᵀ H (X − X★)) + σ_b ⟨E_ξ, X − X★⟩`
///
/// `H` is symmetric positive definite; `E_ξ` is a standard Gaussian matrix
/// drawn from the batch id ([`EVAL_BATCH`] is noise free), so the stochastic gradient `H(X − X★) + σ_b E_ξ`
/// is unbiased with variance `σ_b²` per entry.
#[derive(Clone, Debug)]
pub struct MatrixQuadratic {
    x_star: Matrix,
    h_left: Matrix,
    hessian: Hessian,
    lambda_max: f64,
    lambda_min: f64,
    noise_scale: f64,
    noise_seed: u64,
}

impl MatrixQuadratic {
    pub fn new(x_star: Matrix, h_left: Matrix, noise_scale: f64, noise_seed: u64) -> Result<Self> {
        let m = x_star.rows();
        if h_left.shape() != (m, m) {
            return Err(Error::DimensionMismatch {
                context: "MatrixQuadratic h_left",
                expected: (m, m),
                actual: h_left.shape(),
            });
        }
        if !(noise_scale >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise scale must be >= 0, got {noise_scale}"
            )));
        }
        let asym = h_left.distance(&h_left.transpose());
        if asym > 1e-12 * h_left.frobenius_norm() {
            return Err(Error::InvalidArgument(format!(
                "h_left is not symmetric (defect {asym:e})"
            )));
        }
        // symmetric: singular pairs are eigenpairs up to sign, and the sign of
        // uᵀv is the sign of the eigenvalue
        let svd = svd_oracle(&h_left)?;
        for j in 0..m {
            let sign: f64 = (0..m).map(|i| svd.u[(i, j)] * svd.v[(i, j)]).sum();
            if !(svd.sigma[j] > 0.0) || sign <= 0.0 {
                return Err(Error::InvalidArgument("h_left is not positive definite".to_string()));
            }
        }
        let is_diagonal = (0..m).all(|i| (0..m).all(|j| i == j || h_left[(i, j)] == 0.0));
        let hessian = if h_left == Matrix::identity(m) {
            Hessian::Identity
        } else if is_diagonal {
            Hessian::Diagonal((0..m).map(|i| h_left[(i, i)]).collect())
        } else {
            Hessian::Dense
        };
        Ok(Self {
            x_star,
            h_left,
            hessian,
            lambda_max: svd.sigma[0],
            lambda_min: svd.sigma[m - 1],
            noise_scale,
            noise_seed,
        })
    }

    /// `½‖X − X★‖²_F`.
    pub fn isotropic(x_star: Matrix) -> Self {
        let m = x_star.rows();
        Self::new(x_star, Matrix::identity(m), 0.0, 0).expect("identity is SPD")
    }

    /// Isotropic quadratic whose optimum is a random rank-`rank` matrix with
    /// equal singular values and Frobenius norm `scale`.
    pub fn low_rank_target(m: usize, n: usize, rank: usize, scale: f64, seed: u64) -> Result<Self> {
        let p = m.min(n);
        if rank == 0 || rank > p {
            return Err(Error::InvalidArgument(format!("rank must be in 1..={p}, got {rank}")));
        }
        let mut rng = RngStream::new(seed, 0x51a7);
        let u = qr_decompose(&gaussian_matrix(&mut rng, m, rank))?.q;
        let v = qr_decompose(&gaussian_matrix(&mut rng, n, rank))?.q;
        let x_star = u.matmul_t(&v).scale(scale / (rank as f64).sqrt());
        Ok(Self::isotropic(x_star))
    }

    /// Diagonal `H` with entries spread log-uniformly from `1` down to
    /// `1/condition`.
    pub fn diagonal_hessian(m: usize, condition: f64) -> Result<Matrix> {
        Ok(Matrix::from_diag(&log_spaced(m, condition)?))
    }

    /// SPD `H` with eigenvalues spread log-uniformly over `[1/condition, 1]`.
    pub fn conditioned_hessian(m: usize, condition: f64, seed: u64) -> Result<Matrix> {
        let eig = log_spaced(m, condition)?;
        let mut rng = RngStream::new(seed, 0x4e55);
        let q = qr_decompose(&gaussian_matrix(&mut rng, m, m))?.q;
        let h = q.matmul(&Matrix::from_diag(&eig)).matmul_t(&q);
        // symmetrize away rounding
        Ok(Matrix::from_fn(m, m, |i, j| 0.5 * (h[(i, j)] + h[(j, i)])))
    }

    pub fn with_noise(mut self, noise_scale: f64, noise_seed: u64) -> Self {
        self.noise_scale = noise_scale.max(0.0);
        self.noise_seed = noise_seed;
        self
    }

    pub fn x_star(&self) -> &Matrix {
        &self.x_star
    }

    pub fn h_left(&self) -> &Matrix {
        &self.h_left
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    fn batch_noise(&self, batch: u64) -> Matrix {
        let mut rng = RngStream::new(self.noise_seed, batch);
        gaussian_matrix(&mut rng, self.x_star.rows(), self.x_star.cols())
    }

    /// Noise-free value `½ tr(DᵀHD)`.
    pub fn expected_loss(&self, params: &Matrix) -> f64 {
        let d = params - &self.x_star;
        match &self.hessian {
            Hessian::Identity => 0.5 * d.frobenius_norm_sq(),
            Hessian::Diagonal(h) => {
                0.5 * h
                    .iter()
                    .enumerate()
                    .map(|(i, hi)| hi * crate::linalg::dot(d.row(i), d.row(i)))
                    .sum::<f64>()
            }
            Hessian::Dense => 0.5 * d.inner(&self.h_left.matmul(&d)),
        }
    }

    fn hessian_times(&self, d: Matrix) -> Matrix {
        match &self.hessian {
            Hessian::Identity => d,
            Hessian::Diagonal(h) => Matrix::from_fn(d.rows(), d.cols(), |i, j| h[i] * d[(i, j)]),
            Hessian::Dense => self.h_left.matmul(&d),
        }
    }
}

fn log_spaced(m: usize, condition: f64) -> Result<Vec<f64>> {
    if !(condition >= 1.0 && condition.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "condition must be >= 1, got {condition}"
        )));
    }
    Ok((0..m)
        .map(|i| {
            let t = if m > 1 { i as f64 / (m - 1) as f64 } else { 0.0 };
            condition.powf(-t)
        })
        .collect())
}

impl LossFn for MatrixQuadratic {
    fn shape(&self) -> (usize, usize) {
        self.x_star.shape()
    }

    fn loss(&self, params: &Matrix, batch: u64) -> f64 {
        let base = self.expected_loss(params);
        if self.noise_scale == 0.0 || batch == EVAL_BATCH {
            return base;
        }
        let d = params - &self.x_star;
        base + self.noise_scale * self.batch_noise(batch).inner(&d)
    }
}

impl Objective for MatrixQuadratic {
    fn gradient(&self, params: &Matrix, batch: u64) -> Matrix {
        let d = params - &self.x_star;
        let mut g = self.hessian_times(d);
        if self.noise_scale > 0.0 && batch != EVAL_BATCH {
            g.axpy(self.noise_scale, &self.batch_noise(batch));
        }
        g
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.lambda_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::QueryLedger;
    use crate::objectives::{analytic_gradient, eval_loss, finite_diff_gradient};

    #[test]
    fn zero_at_optimum() {
        let h = MatrixQuadratic::conditioned_hessian(4, 10.0, 1).unwrap();
        let x_star = Matrix::from_fn(4, 3, |i, j| i as f64 - j as f64);
        let q = MatrixQuadratic::new(x_star.clone(), h, 0.0, 0).unwrap();
        assert_eq!(eval_loss(&q, &x_star, 5).unwrap(), 0.0);
        assert!((q.lambda_max() - 1.0).abs() < 1e-10);
        assert!((q.lambda_min() - 0.1).abs() < 1e-10);
    }

    #[test]
    fn gradient_is_h_times_residual() {
        let h = MatrixQuadratic::conditioned_hessian(3, 5.0, 2).unwrap();
        let x_star = Matrix::from_fn(3, 3, |i, j| (i * j) as f64 * 0.3);
        let q = MatrixQuadratic::new(x_star.clone(), h.clone(), 0.0, 0).unwrap();
        let x = Matrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64 * 0.1);
        let g = analytic_gradient(&q, &x, 0).unwrap();
        assert!(g.distance(&h.matmul(&(&x - &x_star))) < 1e-14);
    }

    #[test]
    fn fd_exact_on_quadratic() {
        // no third derivative, so central differences carry rounding error only
        let h = MatrixQuadratic::conditioned_hessian(3, 4.0, 3).unwrap();
        let x_star = Matrix::from_fn(3, 3, |i, j| ((i + j) as f64).cos());
        let q = MatrixQuadratic::new(x_star, h, 0.0, 0).unwrap();
        let x = Matrix::zeros(3, 3);
        let g = q.gradient(&x, 0);
        let mut ledger = QueryLedger::new();
        for step in [1e-3, 1e-4] {
            let fd = finite_diff_gradient(&q, &x, 0, step, &mut ledger).unwrap();
            assert!(fd.distance(&g) < 1e-8, "h={step}");
        }
    }

    #[test]
    fn noisy_variant_is_deterministic_per_batch() {
        let q = MatrixQuadratic::isotropic(Matrix::zeros(2, 2)).with_noise(0.5, 9);
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(q.loss(&x, 3), q.loss(&x, 3));
        assert_ne!(q.loss(&x, 3), q.loss(&x, 4));
        assert_eq!(q.loss(q.x_star(), 3), 0.0);
        assert_eq!(q.loss(&x, EVAL_BATCH), q.expected_loss(&x));
        assert_eq!(q.gradient(&x, EVAL_BATCH), x);
    }

    #[test]
    fn diagonal_fast_path_matches_dense() {
        let h = MatrixQuadratic::diagonal_hessian(5, 50.0).unwrap();
        let x_star = Matrix::from_fn(5, 3, |i, j| (i as f64 + 1.0) * (j as f64 - 1.0));
        let fast = MatrixQuadratic::new(x_star.clone(), h.clone(), 0.0, 0).unwrap();
        let x = Matrix::from_fn(5, 3, |i, j| (i * j) as f64 * 0.2);
        let d = &x - &x_star;
        assert!((fast.loss(&x, 0) - 0.5 * d.inner(&h.matmul(&d))).abs() < 1e-12);
        assert!(fast.gradient(&x, 0).distance(&h.matmul(&d)) < 1e-12);
        assert!((fast.lambda_min() - 0.02).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        let h = Matrix::from_diag(&[1.0, -1.0]);
        assert!(MatrixQuadratic::new(Matrix::zeros(2, 1), h, 0.0, 0).is_err());
        let asym = Matrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]);
        assert!(MatrixQuadratic::new(Matrix::zeros(2, 1), asym, 0.0, 0).is_err());
    }

    #[test]
    fn low_rank_target_shape() {
        let q = MatrixQuadratic::low_rank_target(8, 6, 2, 3.0, 1).unwrap();
        assert!((q.x_star().frobenius_norm() - 3.0).abs() < 1e-12);
        assert_eq!(svd_oracle(q.x_star()).unwrap().rank(1e-10), 2);
    }
}
