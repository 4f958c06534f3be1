//! Small dense linear algebra: Cholesky factorization, column-pivoted QR
//! least squares and a Jacobi eigenvalue sweep.
//!
//! The solver only ever factors s-by-s blocks with s in the tens to low
//! hundreds, so simple cache-friendly loops beat pulling in a LAPACK binding.

use ndarray::{Array1, Array2};
use thiserror::Error;

/// The normal-equations matrix was numerically singular.
#[derive(Debug, Error)]
#[error("rank-deficient system: pivot {pivot:.3e} below {threshold:.3e}")]
pub struct RankDeficientError {
    pub pivot: f64,
    pub threshold: f64,
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
/// Returns `None` when a pivot is non-positive or non-finite.
pub(crate) fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` given the lower factor `L`.
pub(crate) fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// Minimum-norm-residual solve of `min ||a x - b||` by Householder QR with
/// column pivoting. `a` is m-by-k with m >= k.
///
/// Fails with [`RankDeficientError`] when the largest remaining column norm
/// squared (the corresponding normal-equations pivot) drops below
/// `1e-12` times the largest initial one.
pub(crate) fn lstsq_pivoted_qr(
    a: &Array2<f64>,
    b: &Array1<f64>,
) -> Result<Array1<f64>, RankDeficientError> {
    let (m, k) = a.dim();
    assert!(m >= k, "least squares expects an overdetermined system");
    let mut r = a.clone();
    let mut rhs = b.clone();
    let mut perm: Vec<usize> = (0..k).collect();

    let mut col_norm2: Vec<f64> = (0..k)
        .map(|j| r.column(j).iter().map(|v| v * v).sum())
        .collect();
    let max_initial = col_norm2.iter().cloned().fold(0.0, f64::max);
    let threshold = 1e-12 * max_initial;

    for step in 0..k {
        // pivot: bring the column with the largest remaining norm forward
        let (pivot_col, &pivot_norm2) = col_norm2[step..]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, v)| (i + step, v))
            .unwrap();
        if pivot_norm2 < threshold || !pivot_norm2.is_finite() {
            return Err(RankDeficientError {
                pivot: pivot_norm2,
                threshold,
            });
        }
        if pivot_col != step {
            perm.swap(step, pivot_col);
            col_norm2.swap(step, pivot_col);
            for i in 0..m {
                let tmp = r[[i, step]];
                r[[i, step]] = r[[i, pivot_col]];
                r[[i, pivot_col]] = tmp;
            }
        }

        // Householder reflector annihilating below the diagonal of column `step`
        let mut alpha2 = 0.0;
        for i in step..m {
            alpha2 += r[[i, step]] * r[[i, step]];
        }
        let alpha = alpha2.sqrt() * if r[[step, step]] >= 0.0 { -1.0 } else { 1.0 };
        if alpha == 0.0 {
            return Err(RankDeficientError {
                pivot: 0.0,
                threshold,
            });
        }
        let mut v: Vec<f64> = (step..m).map(|i| r[[i, step]]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for j in step..k {
                let dot: f64 = (step..m).map(|i| v[i - step] * r[[i, j]]).sum();
                let scale = 2.0 * dot / vnorm2;
                for i in step..m {
                    r[[i, j]] -= scale * v[i - step];
                }
            }
            let dot: f64 = (step..m).map(|i| v[i - step] * rhs[i]).sum();
            let scale = 2.0 * dot / vnorm2;
            for i in step..m {
                rhs[i] -= scale * v[i - step];
            }
        }
        r[[step, step]] = alpha;
        for i in (step + 1)..m {
            r[[i, step]] = 0.0;
        }
        for j in (step + 1)..k {
            col_norm2[j] = ((step + 1)..m).map(|i| r[[i, j]] * r[[i, j]]).sum();
        }
    }

    // back substitution on the k-by-k upper triangle
    let mut z = Array1::<f64>::zeros(k);
    for i in (0..k).rev() {
        let mut sum = rhs[i];
        for j in (i + 1)..k {
            sum -= r[[i, j]] * z[j];
        }
        z[i] = sum / r[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(k);
    for (pos, &orig) in perm.iter().enumerate() {
        x[orig] = z[pos];
    }
    Ok(x)
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
/// returned in ascending order.
pub(crate) fn sym_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut m = a.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + m.diag().iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let mip = m[[i, p]];
                    let miq = m[[i, q]];
                    m[[i, p]] = c * mip - s * miq;
                    m[[i, q]] = s * mip + c * miq;
                }
                for i in 0..n {
                    let mpi = m[[p, i]];
                    let mqi = m[[q, i]];
                    m[[p, i]] = c * mpi - s * mqi;
                    m[[q, i]] = s * mpi + c * mqi;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = m.diag().to_vec();
    eigs.sort_by(f64::total_cmp);
    eigs
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn cholesky_round_trip() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let l = cholesky(&a).expect("SPD");
        let b = array![1.0, -2.0, 0.5];
        let x = cholesky_solve(&l, &b);
        let back = a.dot(&x);
        for i in 0..3 {
            assert_relative_eq!(back[i], b[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(&a).is_none());
    }

    #[test]
    fn qr_solves_consistent_overdetermined_system() {
        let a = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let truth = array![2.0, -1.0];
        let b = a.dot(&truth);
        let x = lstsq_pivoted_qr(&a, &b).unwrap();
        assert_relative_eq!(x[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn qr_detects_duplicate_columns() {
        let a = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let b = array![1.0, 2.0, 3.0];
        assert!(lstsq_pivoted_qr(&a, &b).is_err());
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let e = sym_eigenvalues(&a);
        assert_relative_eq!(e[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(e[1], 3.0, epsilon = 1e-10);
    }
}
