//! Dense linear-algebra helpers shared by the rest of the crate.
//!
//! Everything here operates on small dense matrices (the largest LMI block
//! the certifier builds is about 8x8), so plain SVD / symmetric
//! eigendecomposition from nalgebra is the right tool throughout.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance used for rank decisions (nullspaces, column-space membership).
pub const RANK_TOL: f64 = 1e-9;

fn svd_with_full_v(m: &Matrix) -> (Vec<f64>, Matrix) {
    // nalgebra returns a thin V^T; padding with zero rows makes it square.
    let (rows, cols) = m.shape();
    let padded = if rows < cols {
        let mut p = Matrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("SVD computed with V");
    (svd.singular_values.iter().copied().collect(), v_t.transpose())
}

/// Orthonormal basis of the numerical nullspace of `m`.
///
/// A right singular vector belongs to the nullspace when its singular value
/// is at most `tol * ||m||`. The result has `m.ncols()` rows and one column
/// per null direction (possibly zero columns).
pub fn nullspace_basis(m: &Matrix, tol: f64) -> Result<Matrix> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::Dimension(format!(
            "nullspace of an empty {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("nullspace tolerance {tol}")));
    }
    let (sv, v) = svd_with_full_v(m);
    let smax = sv.iter().copied().fold(0.0_f64, f64::max);
    let cut = tol * smax;
    let null_cols: Vec<usize> = (0..v.ncols()).filter(|&j| sv[j] <= cut).collect();
    let mut basis = Matrix::zeros(m.ncols(), null_cols.len());
    for (k, &j) in null_cols.iter().enumerate() {
        basis.set_column(k, &v.column(j));
    }
    Ok(basis)
}

/// Numerical rank with the same relative cut-off as [`nullspace_basis`].
pub fn rank(m: &Matrix, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// Largest singular value. Empty matrices have norm zero.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

pub fn symmetrize(s: &Matrix) -> Matrix {
    (s + s.transpose()) * 0.5
}

fn symmetric_eigenvalues(s: &Matrix) -> Result<Vector> {
    if s.nrows() != s.ncols() {
        return Err(Error::Dimension(format!(
            "eigenvalues of a non-square {}x{} matrix",
            s.nrows(),
            s.ncols()
        )));
    }
    if s.nrows() == 0 {
        return Err(Error::Dimension("eigenvalues of an empty matrix".into()));
    }
    Ok(SymmetricEigen::new(symmetrize(s)).eigenvalues)
}

/// Largest eigenvalue of the symmetric part of `s`.
pub fn max_eigenvalue_symmetric(s: &Matrix) -> Result<f64> {
    Ok(symmetric_eigenvalues(s)?.max())
}

/// Smallest eigenvalue of the symmetric part of `s`.
pub fn min_eigenvalue_symmetric(s: &Matrix) -> Result<f64> {
    Ok(symmetric_eigenvalues(s)?.min())
}

/// `Π = (1/n) 1 1ᵀ`.
pub fn averaging_projector(n: usize) -> Matrix {
    Matrix::from_element(n, n, 1.0 / n as f64)
}

/// `I - Π`.
pub fn disagreement_projector(n: usize) -> Matrix {
    Matrix::identity(n, n) - averaging_projector(n)
}

/// Deterministic orthonormal basis (n x (n-1)) of the complement of `1`.
pub fn ones_complement_basis(n: usize) -> Matrix {
    // Helmert contrasts.
    let mut u = Matrix::zeros(n, n.saturating_sub(1));
    for k in 1..n {
        let scale = 1.0 / ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            u[(i, k - 1)] = scale;
        }
        u[(k, k - 1)] = -(k as f64) * scale;
    }
    u
}

/// Minimum-norm least-squares solution of `m x = b` (columns of `b` solved independently).
pub fn least_squares(m: &Matrix, b: &Matrix) -> Result<Matrix> {
    if m.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "least squares with {} equations but {} right-hand-side rows",
            m.nrows(),
            b.nrows()
        )));
    }
    if m.ncols() == 0 {
        return Ok(Matrix::zeros(0, b.ncols()));
    }
    if m.nrows() == 0 {
        return Ok(Matrix::zeros(m.ncols(), b.ncols()));
    }
    let svd = SVD::new(m.clone(), true, true);
    let smax = svd.singular_values.max();
    let eps = (RANK_TOL * smax).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).map_err(|e| Error::Numeric(e.to_string()))
}

/// True when every column of `b` lies in the column space of `m` up to a
/// residual of `tol * max(||m||, ||b||)`.
pub fn in_column_space(m: &Matrix, b: &Matrix, tol: f64) -> Result<bool> {
    let x = least_squares(m, b)?;
    let residual = (m * &x - b).norm();
    let scale = spectral_norm(m).max(b.norm()).max(f64::MIN_POSITIVE);
    Ok(residual <= tol * scale)
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Builds a matrix from nested rows. `cols` is required so that matrices
/// with zero rows keep their width.
pub fn rows_to_matrix(rows: &[Vec<f64>], cols: usize) -> Result<Matrix> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(Error::Dimension(format!(
                "row {i} has {} entries, expected {cols}",
                r.len()
            )));
        }
        if let Some(bad) = r.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite entry {bad} in row {i}")));
        }
    }
    Ok(Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Serde adapter storing matrices as nested row arrays.
pub mod serde_rows {
    use super::Matrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        super::matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let cols = rows.first().map_or(0, Vec::len);
        super::rows_to_matrix(&rows, cols).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    // Independent oracle: power iteration on MᵀM.
    fn power_iteration_norm(m: &Matrix) -> f64 {
        let g = m.transpose() * m;
        let mut v = Vector::from_element(g.ncols(), 1.0);
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let w = &g * &v;
            lambda = w.norm();
            v = w / lambda;
        }
        lambda.sqrt()
    }

    // Independent oracle: cyclic Jacobi rotations.
    fn jacobi_eigenvalues(s: &Matrix) -> Vec<f64> {
        let n = s.nrows();
        let mut a = s.clone();
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let sn = t * c;
                    let mut rot = Matrix::identity(n, n);
                    rot[(p, p)] = c;
                    rot[(q, q)] = c;
                    rot[(p, q)] = sn;
                    rot[(q, p)] = -sn;
                    a = rot.transpose() * &a * &rot;
                }
            }
        }
        (0..n).map(|i| a[(i, i)]).collect()
    }

    #[test]
    fn nullspace_of_coordinate_row() {
        let m = Matrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        let psi = nullspace_basis(&m, RANK_TOL).unwrap();
        assert_eq!(psi.shape(), (3, 2));
        assert_abs_diff_eq!((&m * &psi).norm(), 0.0, epsilon = 1e-15);
        // spans e1 and e3: the middle row of Ψ is zero
        assert_abs_diff_eq!(psi.row(1).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(psi.row(0).norm(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(psi.row(2).norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn nullspace_of_zero_scalar_is_everything() {
        let psi = nullspace_basis(&Matrix::zeros(1, 1), RANK_TOL).unwrap();
        assert_eq!(psi.shape(), (1, 1));
        assert_abs_diff_eq!(psi[(0, 0)].abs(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn nullspace_of_extra_invariant_row() {
        let m = Matrix::from_row_slice(1, 4, &[1.0, -1.0, 0.1, 0.0]);
        let psi = nullspace_basis(&m, RANK_TOL).unwrap();
        assert_eq!(psi.ncols(), 3);
        assert!((&m * &psi).norm() < 1e-12);
        let gram = psi.transpose() * &psi;
        assert!((gram - Matrix::identity(3, 3)).norm() < 1e-10);
    }

    #[test]
    fn nullspace_rejects_empty() {
        assert!(matches!(
            nullspace_basis(&Matrix::zeros(0, 3), RANK_TOL),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn spectral_norm_examples() {
        assert_abs_diff_eq!(spectral_norm(&Matrix::identity(2, 2)), 1.0, epsilon = 1e-14);
        let n = 3;
        let lap = disagreement_projector(n);
        let m = Matrix::identity(n, n) - averaging_projector(n) - lap;
        assert_abs_diff_eq!(spectral_norm(&m), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn spectral_norm_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let m = random_matrix(&mut rng, 4, 3);
            let oracle = power_iteration_norm(&m);
            assert!((spectral_norm(&m) - oracle).abs() < 1e-8 * oracle.max(1.0));
        }
    }

    #[test]
    fn kron_examples() {
        let b = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let k = kron(&Matrix::identity(2, 2), &b);
        let mut expected = Matrix::zeros(4, 4);
        expected.view_mut((0, 0), (2, 2)).copy_from(&b);
        expected.view_mut((2, 2), (2, 2)).copy_from(&b);
        assert_eq!(k, expected);

        let a = Matrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 4.0, 0.0, 3.0]);
        assert_eq!(kron(&a, &Matrix::from_element(1, 1, 1.0)), a);

        let swap = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(
            kron(&swap, &Matrix::from_element(1, 1, 2.0)),
            Matrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0])
        );
    }

    #[test]
    fn max_eigenvalue_examples() {
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, -1.0]));
        assert_abs_diff_eq!(max_eigenvalue_symmetric(&d).unwrap(), 3.0, epsilon = 1e-14);
        let neg = -Matrix::identity(3, 3);
        assert_abs_diff_eq!(max_eigenvalue_symmetric(&neg).unwrap(), -1.0, epsilon = 1e-14);
        assert!(matches!(
            max_eigenvalue_symmetric(&Matrix::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn max_eigenvalue_matches_jacobi() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a = random_matrix(&mut rng, 5, 5);
            let s = symmetrize(&a);
            let oracle = jacobi_eigenvalues(&s)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((max_eigenvalue_symmetric(&s).unwrap() - oracle).abs() < 1e-8);
        }
    }

    #[test]
    fn helmert_basis_is_orthonormal_complement() {
        for n in 2..7 {
            let u = ones_complement_basis(n);
            assert!((u.transpose() * &u - Matrix::identity(n - 1, n - 1)).norm() < 1e-12);
            assert!((u.transpose() * Vector::from_element(n, 1.0)).norm() < 1e-12);
            assert!((&u * u.transpose() - disagreement_projector(n)).norm() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mat(r: usize, c: usize) -> impl Strategy<Value = Matrix> {
            proptest::collection::vec(-3.0..3.0f64, r * c)
                .prop_map(move |v| Matrix::from_row_slice(r, c, &v))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn nullspace_is_orthonormal_and_complements_rank(m in mat(2, 5)) {
                let psi = nullspace_basis(&m, RANK_TOL).unwrap();
                let k = psi.ncols();
                prop_assert!((psi.transpose() * &psi - Matrix::identity(k, k)).norm() < 1e-10);
                prop_assert_eq!(k + rank(&m, RANK_TOL), m.ncols());
                prop_assert!(spectral_norm(&(&m * &psi)) <= 1e-9 * spectral_norm(&m) + 1e-14);
            }

            #[test]
            fn norm_is_transpose_invariant(m in mat(3, 4)) {
                let a = spectral_norm(&m);
                prop_assert!((a - spectral_norm(&m.transpose())).abs() <= 1e-10 * a.max(1.0));
            }

            #[test]
            fn norm_of_kron_is_product(a in mat(2, 3), b in mat(3, 2)) {
                let lhs = spectral_norm(&kron(&a, &b));
                let rhs = spectral_norm(&a) * spectral_norm(&b);
                prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1.0));
            }

            #[test]
            fn max_eig_bounded_by_norm(a in mat(4, 4)) {
                let s = symmetrize(&a);
                prop_assert!(max_eigenvalue_symmetric(&s).unwrap() <= spectral_norm(&s) + 1e-10);
                let psd = &a * a.transpose();
                let lmax = max_eigenvalue_symmetric(&psd).unwrap();
                prop_assert!((lmax - spectral_norm(&psd)).abs() <= 1e-9 * lmax.max(1.0));
            }
        }
    }
}
