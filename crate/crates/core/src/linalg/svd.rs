use super::{dot, Matrix};
use crate::error::{Error, Result};

/// Sweep cap for the Jacobi iteration.
pub const SVD_MAX_SWEEPS: usize = 100;

/// Pairwise column coherence at which a sweep counts as converged.
const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Singular values below `RELATIVE_NULL * sigma_max` get a completed (rather
/// than normalized) left vector so `u` stays orthonormal.
const RELATIVE_NULL: f64 = 1e-13;

/// Compact SVD `a = u · diag(sigma) · vᵀ` with `p = min(rows, cols)`.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for j in 0..self.sigma.len() {
            for i in 0..us.rows() {
                us[(i, j)] *= self.sigma[j];
            }
        }
        us.matmul_t(&self.v)
    }

    /// Numerical rank relative to the largest singular value.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.sigma.first().copied().unwrap_or(0.0);
        self.sigma.iter().filter(|&&s| s > rel_tol * top).count()
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd_oracle(a: &Matrix) -> Result<SvdFactors> {
    if !a.is_finite() {
        return Err(Error::InvalidArgument("svd_oracle needs finite entries".into()));
    }
    if a.rows() < a.cols() {
        let t = svd_tall(&a.transpose())?;
        return Ok(SvdFactors {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }
    svd_tall(a)
}

fn svd_tall(a: &Matrix) -> Result<SvdFactors> {
    let (m, n) = a.shape();
    // columns of `a` become rows of `w` so rotations touch contiguous memory
    let mut w = a.transpose();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm_sq();

    let mut converged = scale == 0.0 || n < 2;
    let mut sweeps = 0;
    let mut off = 0.0;
    while !converged {
        if sweeps == SVD_MAX_SWEEPS {
            return Err(Error::ConvergenceFailure {
                sweeps,
                off_diagonal: off,
            });
        }
        sweeps += 1;
        off = 0.0f64;
        for i in 0..n - 1 {
            for j in i + 1..n {
                let alpha = dot(w.row(i), w.row(i));
                let beta = dot(w.row(j), w.row(j));
                let gamma = dot(w.row(i), w.row(j));
                let denom = (alpha * beta).sqrt();
                if gamma == 0.0 || denom <= f64::MIN_POSITIVE * scale.max(1.0) {
                    continue;
                }
                let coherence = gamma.abs() / denom;
                off = off.max(coherence);
                if coherence <= OFF_DIAGONAL_TOL {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut w, i, j, c, s);
                rotate_rows(&mut v, i, j, c, s);
            }
        }
        converged = off <= OFF_DIAGONAL_TOL;
    }

    // v was rotated as rows, so its rows hold the right singular vectors
    let mut order: Vec<(usize, f64)> = (0..n).map(|j| (j, dot(w.row(j), w.row(j)).sqrt())).collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let sigma_max = order.first().map_or(0.0, |o| o.1);

    let mut u = Matrix::zeros(m, n);
    let mut v_out = Matrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (dst, &(src, s)) in order.iter().enumerate() {
        sigma.push(s);
        let mut vcol: Vec<f64> = v.row(src).to_vec();
        if s > RELATIVE_NULL * sigma_max && s > 0.0 {
            let mut ucol: Vec<f64> = w.row(src).iter().map(|x| x / s).collect();
            // sign convention: largest-magnitude entry of each v column is positive
            let pivot = vcol
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map_or(1.0, |p| *p.1);
            if pivot < 0.0 {
                vcol.iter_mut().for_each(|x| *x = -*x);
                ucol.iter_mut().for_each(|x| *x = -*x);
            }
            u.set_column(dst, &ucol);
        } else {
            missing.push(dst);
        }
        v_out.set_column(dst, &vcol);
    }
    complete_orthonormal(&mut u, &missing);

    Ok(SvdFactors { u, sigma, v: v_out })
}

fn rotate_rows(m: &mut Matrix, i: usize, j: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(j * cols);
    let ri = &mut head[i * cols..(i + 1) * cols];
    let rj = &mut tail[..cols];
    for (x, y) in ri.iter_mut().zip(rj.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to every
/// other column, via Gram-Schmidt on the standard basis.
fn complete_orthonormal(u: &mut Matrix, missing: &[usize]) {
    let m = u.rows();
    let mut filled: Vec<usize> = (0..u.cols()).filter(|j| !missing.contains(j)).collect();
    for &target in missing {
        let mut best: Option<Vec<f64>> = None;
        let mut best_norm = 0.0;
        for e in 0..m {
            let mut cand = vec![0.0; m];
            cand[e] = 1.0;
            for _ in 0..2 {
                for &j in &filled {
                    let col = u.column(j);
                    let p = dot(&cand, &col);
                    cand.iter_mut().zip(&col).for_each(|(c, q)| *c -= p * q);
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if norm > best_norm {
                best_norm = norm;
                best = Some(cand);
            }
            if best_norm > 0.5 {
                break;
            }
        }
        let mut col = best.expect("room for another orthonormal column");
        col.iter_mut().for_each(|c| *c /= best_norm);
        u.set_column(target, &col);
        filled.push(target);
    }
}
