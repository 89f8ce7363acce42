//! Spectral operators.
//!
//! `msign` replaces every nonzero singular value by one; `msign_k` keeps only
//! the top `k` singular pairs. The `*_oracle` functions compute both exactly
//! through the Jacobi SVD and exist for tests and diagnostics. Optimizers use
//! [`newton_schulz`] (full orthogonalization, the ZO-Muon baseline) or
//! [`spi_step`] (one warm-started power-iteration pass per call).

use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, normalize_columns, qr_decompose, svd_oracle, Matrix, RngStream, COLLAPSE_TOL};

/// Singular values below this fraction of `sigma_1` count as zero in
/// [`msign_oracle`] and as a tie in the [`msign_k_oracle`] gap check.
pub const SPECTRAL_REL_TOL: f64 = 1e-10;

/// Coefficients `(a, b, c)` of an odd quintic `x ↦ a·x + b·x³ + c·x⁵`
/// applied to singular values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuinticCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Degree-5 Newton–Schulz step `x(15 − 10x² + 3x⁴)/8`. Fixed point at 1 with
/// third-order convergence; converges for singular values in `(0, ~1.5)`.
pub const NS_CONVERGENT: QuinticCoefficients = QuinticCoefficients {
    a: 15.0 / 8.0,
    b: -10.0 / 8.0,
    c: 3.0 / 8.0,
};

/// The tuned quintic used by reference Muon implementations. Singular values
/// settle in a band around `[0.7, 1.2]` rather than converging to 1.
pub const NS_MUON_QUINTIC: QuinticCoefficients = QuinticCoefficients {
    a: 3.4445,
    b: -4.7750,
    c: 2.0315,
};

/// Default iteration count for Newton–Schulz.
pub const NS_DEFAULT_ITERS: usize = 5;

/// How the input is normalized before the polynomial iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NsScaling {
    /// Divide by a power-iteration estimate of the spectral norm.
    SpectralEstimate,
    /// Divide by the Frobenius norm.
    Frobenius,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonSchulz {
    pub coefficients: QuinticCoefficients,
    pub scaling: NsScaling,
    pub iters: usize,
}

impl Default for NewtonSchulz {
    fn default() -> Self {
        Self {
            coefficients: NS_CONVERGENT,
            scaling: NsScaling::SpectralEstimate,
            iters: NS_DEFAULT_ITERS,
        }
    }
}

impl NewtonSchulz {
    /// Reference-Muon flavour: tuned quintic on Frobenius-scaled input.
    pub fn muon_quintic(iters: usize) -> Self {
        Self {
            coefficients: NS_MUON_QUINTIC,
            scaling: NsScaling::Frobenius,
            iters,
        }
    }

    pub fn apply(&self, g: &Matrix) -> Matrix {
        let scale = match self.scaling {
            NsScaling::SpectralEstimate => spectral_norm_estimate(g, 12),
            NsScaling::Frobenius => g.frobenius_norm(),
        };
        if !(scale > 0.0) || !scale.is_finite() {
            return Matrix::zeros(g.rows(), g.cols());
        }
        // iterate on the wide orientation so the Gram matrix is the small one
        let tall = g.rows() > g.cols();
        let mut x = if tall { g.transpose() } else { g.clone() };
        x.scale_in_place(1.0 / scale);
        let QuinticCoefficients { a, b, c } = self.coefficients;
        for _ in 0..self.iters {
            let gram = x.matmul_t(&x);
            let mut poly = gram.matmul(&gram);
            poly.scale_in_place(c);
            poly.axpy(b, &gram);
            let mut next = poly.matmul(&x);
            next.axpy(a, &x);
            x = next;
        }
        if tall {
            x.transpose()
        } else {
            x
        }
    }
}

/// `iters` rounds of power iteration on `gᵀg` from a fixed start vector.
/// Never exceeds the true spectral norm; exact for matrices whose singular
/// values are all equal.
pub fn spectral_norm_estimate(g: &Matrix, iters: usize) -> f64 {
    let n = g.cols();
    if n == 0 || g.rows() == 0 {
        return 0.0;
    }
    // deterministic, generically non-orthogonal start
    let mut v = Matrix::from_fn(n, 1, |i, _| 1.0 + ((i * 7919) % 97) as f64 / 97.0);
    let mut estimate = 0.0;
    for _ in 0..iters.max(1) {
        let norm = v.frobenius_norm();
        if norm == 0.0 {
            return estimate;
        }
        v.scale_in_place(1.0 / norm);
        let gv = g.matmul(&v);
        estimate = gv.frobenius_norm();
        v = g.t_matmul(&gv);
    }
    estimate
}

/// Newton–Schulz approximation of [`msign_oracle`] with the default variant.
/// Zero (or non-finite-norm) input maps to zero.
pub fn newton_schulz(g: &Matrix, iters: usize) -> Matrix {
    NewtonSchulz {
        iters,
        ..NewtonSchulz::default()
    }
    .apply(g)
}

/// Exact polar factor `U·Vᵀ`, dropping singular values below
/// `SPECTRAL_REL_TOL · sigma_1`.
pub fn msign_oracle(g: &Matrix) -> Result<Matrix> {
    let svd = svd_oracle(g)?;
    let keep = svd.rank(SPECTRAL_REL_TOL);
    Ok(svd.u.columns(0, keep).matmul_t(&svd.v.columns(0, keep)))
}

/// Exact rank-`k` partial orthogonalization `U[:, :k]·V[:, :k]ᵀ`.
///
/// Refuses with [`Error::DegenerateGap`] when `sigma_k` and `sigma_{k+1}` tie,
/// since the top-`k` subspace is then not unique.
pub fn msign_k_oracle(g: &Matrix, k: usize) -> Result<Matrix> {
    let p = g.rows().min(g.cols());
    if k == 0 || k > p {
        return Err(Error::InvalidArgument(format!(
            "msign_k needs 1 <= k <= {p}, got k={k}"
        )));
    }
    let svd = svd_oracle(g)?;
    if k < p {
        let (sk, sn) = (svd.sigma[k - 1], svd.sigma[k]);
        if sk - sn < SPECTRAL_REL_TOL * svd.sigma[0] {
            return Err(Error::DegenerateGap {
                k,
                sigma_k: sk,
                sigma_next: sn,
            });
        }
    }
    Ok(svd.u.columns(0, k).matmul_t(&svd.v.columns(0, k)))
}

/// Cached right singular subspace carried between power-iteration steps.
#[derive(Clone, Debug)]
pub struct SpiCache {
    v: Matrix,
    age: u64,
    restarts: u64,
}

impl SpiCache {
    /// Cold start from the QR of an `n × k` Gaussian draw.
    pub fn cold_start(n: usize, k: usize, rng: &mut RngStream) -> Result<Self> {
        Ok(Self {
            v: random_orthonormal(n, k, rng)?,
            age: 0,
            restarts: 0,
        })
    }

    /// Wraps an existing basis; fails unless `v` has orthonormal columns.
    pub fn from_basis(v: Matrix) -> Result<Self> {
        if v.cols() == 0 || v.cols() > v.rows() {
            return Err(Error::InvalidArgument(format!(
                "cache basis must be n x k with 1 <= k <= n, got {:?}",
                v.shape()
            )));
        }
        let defect = v.orthonormality_defect();
        if defect > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "cache basis not orthonormal (defect {defect:e})"
            )));
        }
        Ok(Self { v, age: 0, restarts: 0 })
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn k(&self) -> usize {
        self.v.cols()
    }

    pub fn n(&self) -> usize {
        self.v.rows()
    }

    /// Steps since the last cold start.
    pub fn age(&self) -> u64 {
        self.age
    }

    /// Total cold restarts triggered inside [`spi_step`].
    pub fn restarts(&self) -> u64 {
        self.restarts
    }
}

/// Output of one streaming power-iteration step: `o = u·vᵀ`.
#[derive(Clone, Debug)]
pub struct PartialOrthogonalization {
    pub o: Matrix,
    pub u: Matrix,
    pub v: Matrix,
    /// Columns of `u` that collapsed under normalization and were zeroed.
    pub degenerate_columns: usize,
}

fn random_orthonormal(n: usize, k: usize, rng: &mut RngStream) -> Result<Matrix> {
    match qr_decompose(&gaussian_matrix(rng, n, k)) {
        Ok(f) => Ok(f.q),
        // measure-zero event; one resample
        Err(Error::RankDeficient { .. }) => Ok(qr_decompose(&gaussian_matrix(rng, n, k))?.q),
        Err(e) => Err(e),
    }
}

fn power_pass(m: &Matrix, v: &Matrix) -> Result<Matrix> {
    let mut q = m.t_matmul(&m.matmul(v));
    // QR's Q factor is invariant to positive rescaling; normalizing makes the
    // collapse test relative to the momentum's own scale
    let norm = q.frobenius_norm();
    if !(norm > COLLAPSE_TOL) || !norm.is_finite() {
        return Err(Error::RankDeficient { column: 0, norm });
    }
    q.scale_in_place(1.0 / norm);
    Ok(qr_decompose(&q)?.q)
}

/// One warm-started power-iteration pass on an `r × n` matrix.
///
/// `q = mᵀ(m·v)`, `v' = QR(q)`, `u = normalize_columns(m·v')`, `o = u·v'ᵀ`.
/// If `q` is rank deficient the cache is resampled once from `rng`; a second
/// failure returns [`Error::ColdRestartLoop`].
pub fn spi_step(m: &Matrix, cache: &SpiCache, rng: &mut RngStream) -> Result<(PartialOrthogonalization, SpiCache)> {
    let (k, n) = (cache.k(), cache.n());
    if m.cols() != n {
        return Err(Error::DimensionMismatch {
            context: "spi_step momentum columns vs cache rows",
            expected: (m.rows(), n),
            actual: m.shape(),
        });
    }
    if k > m.rows() {
        return Err(Error::InvalidArgument(format!(
            "spectral rank k={k} exceeds momentum rows r={}",
            m.rows()
        )));
    }

    let (v_next, age, restarts) = match power_pass(m, &cache.v) {
        Ok(v) => (v, cache.age + 1, cache.restarts),
        Err(Error::RankDeficient { .. }) => {
            let fresh = random_orthonormal(n, k, rng)?;
            match power_pass(m, &fresh) {
                Ok(v) => (v, 1, cache.restarts + 1),
                Err(Error::RankDeficient { .. }) => return Err(Error::ColdRestartLoop),
                Err(e) => return Err(e),
            }
        }
        Err(e) => return Err(e),
    };

    let mv = m.matmul(&v_next);
    let u = normalize_columns(&mv);
    let degenerate_columns = (0..k).filter(|&j| (0..u.rows()).all(|i| u[(i, j)] == 0.0)).count();
    let o = u.matmul_t(&v_next);
    Ok((
        PartialOrthogonalization {
            o,
            u,
            v: v_next.clone(),
            degenerate_columns,
        },
        SpiCache {
            v: v_next,
            age,
            restarts,
        },
    ))
}

/// Spectral norm of `(v_perpᵀ v)(v_starᵀ v)⁻¹`: the tangent of the largest
/// principal angle between `span(v)` and `span(v_star)`. Returns `+∞` when
/// `v_starᵀ v` is singular.
pub fn tracking_error_tangent(v: &Matrix, v_star: &Matrix, v_perp: &Matrix) -> Result<f64> {
    let (n, k) = v.shape();
    v_star.check_shape("tracking_error_tangent v_star", (n, k))?;
    v_perp.check_shape("tracking_error_tangent v_perp", (n, n - k))?;
    let c = v_star.t_matmul(v);
    let d = v_perp.t_matmul(v);
    let Some(c_inv) = invert(&c) else {
        return Ok(f64::INFINITY);
    };
    if n == k {
        return Ok(0.0);
    }
    let t = d.matmul(&c_inv);
    spectral_norm(&t)
}

/// Same quantity as [`tracking_error_tangent`] without an explicit
/// complement: `tan θ_max` where `cos θ_max = σ_min(v_starᵀ v)`.
pub fn principal_angle_tangent(v: &Matrix, v_star: &Matrix) -> Result<f64> {
    v_star.check_shape("principal_angle_tangent v_star", v.shape())?;
    let cosines = svd_oracle(&v_star.t_matmul(v))?.sigma;
    let c = cosines.last().copied().unwrap_or(0.0).min(1.0);
    if c <= COLLAPSE_TOL {
        return Ok(f64::INFINITY);
    }
    Ok((1.0 - c * c).max(0.0).sqrt() / c)
}

/// Largest singular value, via the SVD oracle.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    Ok(svd_oracle(m)?.sigma.first().copied().unwrap_or(0.0))
}

/// Gauss–Jordan inverse with partial pivoting; `None` when a pivot falls
/// below `1e-12` relative to the largest entry.
fn invert(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let scale = a.max_abs();
    if scale == 0.0 {
        return None;
    }
    let mut work = a.clone();
    let mut inv = Matrix::identity(n);
    for col in 0..n {
        let pivot_row = (col..n).max_by(|&i, &j| work[(i, col)].abs().total_cmp(&work[(j, col)].abs()))?;
        let pivot = work[(pivot_row, col)];
        if pivot.abs() <= COLLAPSE_TOL * scale {
            return None;
        }
        if pivot_row != col {
            for j in 0..n {
                let t = work[(col, j)];
                work[(col, j)] = work[(pivot_row, j)];
                work[(pivot_row, j)] = t;
                let t = inv[(col, j)];
                inv[(col, j)] = inv[(pivot_row, j)];
                inv[(pivot_row, j)] = t;
            }
        }
        for j in 0..n {
            work[(col, j)] /= pivot;
            inv[(col, j)] /= pivot;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = work[(i, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                work[(i, j)] -= f * work[(col, j)];
                inv[(i, j)] -= f * inv[(col, j)];
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted(rng: &mut RngStream, m: usize, n: usize, sigma: &[f64]) -> (Matrix, Matrix, Matrix) {
        let u = qr_decompose(&gaussian_matrix(rng, m, m)).unwrap().q;
        let v = qr_decompose(&gaussian_matrix(rng, n, n)).unwrap().q;
        let p = sigma.len();
        let a = u
            .columns(0, p)
            .matmul(&Matrix::from_diag(sigma))
            .matmul_t(&v.columns(0, p));
        (a, u, v)
    }

    #[test]
    fn msign_of_orthogonal_is_identity_map() {
        let mut rng = RngStream::new(1, 0);
        let q = qr_decompose(&gaussian_matrix(&mut rng, 5, 5)).unwrap().q;
        assert!(msign_oracle(&q).unwrap().distance(&q) < 1e-10);
    }

    #[test]
    fn msign_diagonal() {
        let d = Matrix::from_diag(&[5.0, 0.1]);
        assert!(msign_oracle(&d).unwrap().distance(&Matrix::identity(2)) < 1e-14);
    }

    #[test]
    fn msign_random_has_unit_spectrum() {
        let mut rng = RngStream::new(2, 0);
        let g = gaussian_matrix(&mut rng, 5, 3);
        let s = svd_oracle(&msign_oracle(&g).unwrap()).unwrap();
        assert!(s.sigma.iter().all(|x| (x - 1.0).abs() < 1e-8), "{:?}", s.sigma);
    }

    #[test]
    fn msign_k_diagonal_truncation() {
        let d = Matrix::from_diag(&[5.0, 3.0, 1.0]);
        let o = msign_k_oracle(&d, 2).unwrap();
        assert!(o.distance(&Matrix::from_diag(&[1.0, 1.0, 0.0])) < 1e-14);
    }

    #[test]
    fn msign_k_at_rank_matches_msign() {
        let mut rng = RngStream::new(3, 0);
        let (g, _, _) = planted(&mut rng, 6, 5, &[4.0, 2.0, 1.0]);
        let full = msign_oracle(&g).unwrap();
        assert!(msign_k_oracle(&g, 3).unwrap().distance(&full) < 1e-8);
    }

    #[test]
    fn msign_k_planted_truncation() {
        let mut rng = RngStream::new(4, 0);
        let sigma = [10.0, 5.0, 1.0, 0.5, 0.1, 0.01];
        let (g, u, v) = planted(&mut rng, 8, 6, &sigma);
        let expected = u.columns(0, 2).matmul_t(&v.columns(0, 2));
        assert!(msign_k_oracle(&g, 2).unwrap().distance(&expected) < 1e-8);
    }

    #[test]
    fn msign_k_refuses_ties() {
        let d = Matrix::from_diag(&[3.0, 2.0, 2.0]);
        assert!(matches!(msign_k_oracle(&d, 2), Err(Error::DegenerateGap { k: 2, .. })));
        assert!(msign_k_oracle(&d, 1).is_ok());
        assert!(msign_k_oracle(&d, 4).is_err());
    }

    #[test]
    fn msign_k_idempotent() {
        let mut rng = RngStream::new(5, 0);
        let g = gaussian_matrix(&mut rng, 7, 5);
        let o = msign_k_oracle(&g, 3).unwrap();
        // o has three unit singular values and zeros beyond, so the gap is 1
        assert!(msign_k_oracle(&o, 3).unwrap().distance(&o) < 1e-8);
    }

    #[test]
    fn ns_fixed_point_on_orthogonal() {
        let mut rng = RngStream::new(6, 0);
        for &(m, n) in &[(4, 4), (6, 3), (3, 6)] {
            let q = if m >= n {
                qr_decompose(&gaussian_matrix(&mut rng, m, n)).unwrap().q
            } else {
                qr_decompose(&gaussian_matrix(&mut rng, n, m)).unwrap().q.transpose()
            };
            for iters in [1, 2, 5, 10] {
                assert!(newton_schulz(&q, iters).distance(&q) < 1e-6, "{m}x{n} iters={iters}");
            }
        }
    }

    #[test]
    fn ns_diag_case() {
        let o = newton_schulz(&Matrix::from_diag(&[2.0, 0.5]), 5);
        let target = Matrix::identity(2);
        for i in 0..2 {
            for j in 0..2 {
                assert!((o[(i, j)] - target[(i, j)]).abs() <= 0.05);
            }
        }
    }

    #[test]
    fn ns_zero_is_zero() {
        assert_eq!(newton_schulz(&Matrix::zeros(3, 2), 5), Matrix::zeros(3, 2));
    }

    #[test]
    fn muon_quintic_stays_in_band() {
        let mut rng = RngStream::new(7, 0);
        let g = gaussian_matrix(&mut rng, 16, 32);
        let o = NewtonSchulz::muon_quintic(5).apply(&g);
        let s = svd_oracle(&o).unwrap();
        assert!(s.sigma.iter().all(|&x| x > 0.5 && x < 1.3), "{:?}", s.sigma);
    }

    #[test]
    fn spectral_estimate_bounded_by_truth() {
        let mut rng = RngStream::new(8, 0);
        let g = gaussian_matrix(&mut rng, 9, 6);
        let truth = spectral_norm(&g).unwrap();
        let est = spectral_norm_estimate(&g, 12);
        assert!(est <= truth * (1.0 + 1e-12));
        assert!(est > 0.9 * truth);
    }

    #[test]
    fn spi_axis_aligned() {
        let m = Matrix::from_rows(&[[3.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let cache = SpiCache::from_basis(Matrix::from_rows(&[[1.0], [0.0], [0.0]])).unwrap();
        let mut rng = RngStream::new(0, 0);
        let (out, next) = spi_step(&m, &cache, &mut rng).unwrap();
        assert!(out.v.distance(&Matrix::from_rows(&[[1.0], [0.0], [0.0]])) < 1e-15);
        assert!(out.u.distance(&Matrix::from_rows(&[[1.0], [0.0]])) < 1e-15);
        assert!(out.o.distance(&Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])) < 1e-15);
        assert_eq!(next.age(), 1);
        assert_eq!(out.degenerate_columns, 0);
    }

    #[test]
    fn spi_fixed_point_on_true_subspace() {
        let mut rng = RngStream::new(9, 0);
        let (m, _, v) = planted(&mut rng, 6, 8, &[5.0, 3.0, 1.0, 0.5, 0.2, 0.1]);
        let cache = SpiCache::from_basis(v.columns(0, 2)).unwrap();
        let (out, _) = spi_step(&m, &cache, &mut rng).unwrap();
        let err = tracking_error_tangent(&out.v, &v.columns(0, 2), &v.columns(2, 8)).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn spi_norm_is_sqrt_k() {
        let mut rng = RngStream::new(10, 0);
        let m = gaussian_matrix(&mut rng, 6, 9);
        let mut cache = SpiCache::cold_start(9, 3, &mut rng).unwrap();
        for _ in 0..4 {
            let (out, next) = spi_step(&m, &cache, &mut rng).unwrap();
            assert!((out.o.frobenius_norm() - 3f64.sqrt()).abs() < 1e-8);
            cache = next;
        }
    }

    #[test]
    fn spi_cold_restart_and_loop() {
        let mut rng = RngStream::new(11, 0);
        // cached direction annihilated by m: forces one restart
        let m = Matrix::from_rows(&[[0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]);
        let cache = SpiCache::from_basis(Matrix::from_rows(&[[1.0], [0.0], [0.0]])).unwrap();
        let (_, next) = spi_step(&m, &cache, &mut rng).unwrap();
        assert_eq!(next.restarts(), 1);
        assert_eq!(next.age(), 1);

        let zero = Matrix::zeros(2, 3);
        assert!(matches!(spi_step(&zero, &cache, &mut rng), Err(Error::ColdRestartLoop)));
    }

    #[test]
    fn spi_rejects_bad_shapes() {
        let mut rng = RngStream::new(12, 0);
        let cache = SpiCache::cold_start(4, 3, &mut rng).unwrap();
        assert!(matches!(
            spi_step(&Matrix::zeros(2, 5), &cache, &mut rng),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(spi_step(&Matrix::identity(4), &cache, &mut rng).is_ok());
        let short = Matrix::from_fn(2, 4, |i, j| (i + j) as f64);
        assert!(spi_step(&short, &cache, &mut rng).is_err());
    }

    #[test]
    fn tangent_examples() {
        let e1 = Matrix::from_rows(&[[1.0], [0.0]]);
        let e2 = Matrix::from_rows(&[[0.0], [1.0]]);
        assert_eq!(tracking_error_tangent(&e1, &e1, &e2).unwrap(), 0.0);
        assert_eq!(tracking_error_tangent(&e2, &e1, &e2).unwrap(), f64::INFINITY);
        let theta = 30f64.to_radians();
        let v = Matrix::from_rows(&[[theta.cos()], [theta.sin()]]);
        let t = tracking_error_tangent(&v, &e1, &e2).unwrap();
        assert!((t - theta.tan()).abs() < 1e-12, "{t}");
        assert!((t - 0.5774).abs() < 1e-4);
    }

    #[test]
    fn principal_angle_tangent_matches_complement_form() {
        let mut rng = RngStream::new(17, 0);
        let basis = qr_decompose(&gaussian_matrix(&mut rng, 7, 7)).unwrap().q;
        let v_star = basis.columns(0, 3);
        let v_perp = basis.columns(3, 7);
        let v = qr_decompose(&v_star.added(0.3, &gaussian_matrix(&mut rng, 7, 3)))
            .unwrap()
            .q;
        let a = tracking_error_tangent(&v, &v_star, &v_perp).unwrap();
        let b = principal_angle_tangent(&v, &v_star).unwrap();
        assert!((a - b).abs() < 1e-10 * (1.0 + a), "{a} vs {b}");
        assert_eq!(
            principal_angle_tangent(&v_perp.columns(0, 3), &v_star).unwrap(),
            f64::INFINITY
        );
    }
}
