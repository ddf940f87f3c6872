//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{CollapseError, Result};

/// Symmetrize in place: `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// nonincreasing order (eigenvectors permuted to match).
pub fn sorted_sym_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in idx.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Largest and smallest eigenvalue of a symmetric matrix.
pub fn eig_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    let (values, _) = sorted_sym_eigen(a);
    (values[values.len() - 1], values[0])
}

/// Fails with `RankDeficient` if `λ_min ≤ rel_tol · λ_max`.
pub fn check_full_rank(a: &DMatrix<f64>, rel_tol: f64, name: &'static str) -> Result<()> {
    let (min_eig, max_eig) = eig_extremes(a);
    if !(max_eig > 0.0) || min_eig <= rel_tol * max_eig {
        return Err(CollapseError::RankDeficient {
            matrix: name,
            min_eig,
            max_eig,
        });
    }
    Ok(())
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix; eigenvalues at or
/// below `rel_cutoff · λ_max` are treated as zero.
pub fn pinv_sym(a: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let (values, vectors) = sorted_sym_eigen(a);
    let max = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut out = DMatrix::zeros(n, n);
    if max == 0.0 {
        return out;
    }
    for k in 0..n {
        if values[k].abs() > rel_cutoff * max {
            let v = vectors.column(k);
            out += (v * v.transpose()) / values[k];
        }
    }
    out
}

/// Solve `K X = B` for symmetric positive-definite `K`.
pub fn spd_solve(k: &DMatrix<f64>, b: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>> {
    let chol = k.clone().cholesky().ok_or_else(|| {
        let (min_eig, max_eig) = eig_extremes(k);
        CollapseError::RankDeficient {
            matrix: name,
            min_eig,
            max_eig,
        }
    })?;
    Ok(chol.solve(b))
}

pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Sine of the largest principal angle between the column spans of two
/// matrices with orthonormal columns, returned as an angle in radians.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() == 0 {
        return 0.0;
    }
    // ‖(I − A Aᵀ) B‖₂ = sin θ_max; accurate for small angles.
    let residual = b - a * (a.transpose() * b);
    let s = singular_values(&residual).first().copied().unwrap_or(0.0);
    s.clamp(0.0, 1.0).asin()
}

/// Singular values in nonincreasing order, `min(rows, cols)` of them.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let a = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let mut s = a
        .singular_values()
        .expect("SVD of a finite matrix converges");
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Columns `0..k` of `m`.
pub fn leading_columns(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    m.columns(0, k).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_eigen_is_nonincreasing() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, -1.0]);
        let (vals, vecs) = sorted_sym_eigen(&a);
        assert_eq!(vals.as_slice(), &[5.0, 2.0, -1.0]);
        let recon = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!((recon - a).norm() < 1e-12);
    }

    #[test]
    fn pinv_of_rank_one() {
        let v = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let a = &v * v.transpose();
        let p = pinv_sym(&a, 1e-10);
        // pinv(v vᵀ) = v vᵀ / ‖v‖⁴
        let expected = &a / 81.0;
        assert!((p - expected).norm() < 1e-14);
    }

    #[test]
    fn principal_angle_of_rotated_line() {
        let theta = 0.3_f64;
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[theta.cos(), theta.sin()]);
        assert!((max_principal_angle(&a, &b) - theta).abs() < 1e-14);
        assert!(max_principal_angle(&a, &a) < 1e-15);
    }

    #[test]
    fn rank_check_rejects_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            check_full_rank(&a, 1e-10, "A"),
            Err(CollapseError::RankDeficient { matrix: "A", .. })
        ));
        assert!(check_full_rank(&DMatrix::identity(2, 2), 1e-10, "I").is_ok());
    }
}
