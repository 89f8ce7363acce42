use super::{Matrix, COLLAPSE_TOL};
use crate::error::{Error, Result};

/// Thin QR factors: `q` is `m × n` with orthonormal columns, `r` is `n × n`
/// upper triangular with a strictly positive diagonal.
#[derive(Clone, Debug)]
pub struct QrFactors {
    pub q: Matrix,
    pub r: Matrix,
}

/// Householder QR of a tall (or square) matrix.
///
/// Signs are fixed afterwards so that `diag(r) > 0`, which makes the
/// factorization unique for full-rank input. A diagonal entry of magnitude at
/// most [`COLLAPSE_TOL`] reports [`Error::RankDeficient`].
pub fn qr_decompose(a: &Matrix) -> Result<QrFactors> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::InvalidArgument(format!(
            "qr_decompose needs rows >= cols, got {m}x{n}"
        )));
    }
    let mut work = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);

    for j in 0..n {
        let norm_x = (j..m).map(|i| work[(i, j)] * work[(i, j)]).sum::<f64>().sqrt();
        let mut v: Vec<f64> = (j..m).map(|i| work[(i, j)]).collect();
        if norm_x == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm_x } else { norm_x };
        v[0] -= alpha;
        let v_norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if v_norm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        v.iter_mut().for_each(|x| *x /= v_norm);

        // apply H = I - 2vvᵀ to the trailing block
        for c in j..n {
            let s: f64 = v.iter().enumerate().map(|(k, vk)| vk * work[(j + k, c)]).sum();
            for (k, vk) in v.iter().enumerate() {
                work[(j + k, c)] -= 2.0 * vk * s;
            }
        }
        reflectors.push(v);
    }

    let mut r = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            r[(i, j)] = work[(i, j)];
        }
    }

    // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of I
    let mut q = Matrix::eye(m, n);
    for (j, v) in reflectors.iter().enumerate().rev() {
        if v.is_empty() {
            continue;
        }
        for c in 0..n {
            let s: f64 = v.iter().enumerate().map(|(k, vk)| vk * q[(j + k, c)]).sum();
            for (k, vk) in v.iter().enumerate() {
                q[(j + k, c)] -= 2.0 * vk * s;
            }
        }
    }

    for j in 0..n {
        let d = r[(j, j)];
        if d.abs() <= COLLAPSE_TOL || !d.is_finite() {
            return Err(Error::RankDeficient {
                column: j,
                norm: d.abs(),
            });
        }
        if d < 0.0 {
            for c in j..n {
                r[(j, c)] = -r[(j, c)];
            }
            for i in 0..m {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }

    Ok(QrFactors { q, r })
}
