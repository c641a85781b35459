//! Small dense linear-algebra helpers shared by the graph, criteria and
//! simulator modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition-number ceiling for `A·Aᵀ` in [`pseudo_inverse`].
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Tolerance used for symmetry assertions before a symmetric eigensolve.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Right pseudo-inverse of a full-row-rank matrix, `A⁺ = Aᵀ(AAᵀ)⁻¹`.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() == 0 || a.nrows() > a.ncols() {
        return Err(Error::RankDeficient { cond: f64::INFINITY });
    }
    let gram = a * a.transpose();
    let eig = SymmetricEigen::new(gram.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let cond = if lo <= 0.0 { f64::INFINITY } else { hi / lo };
    if !(cond <= MAX_GRAM_CONDITION) {
        return Err(Error::RankDeficient { cond });
    }
    let inv = gram
        .cholesky()
        .ok_or(Error::RankDeficient { cond })?
        .inverse();
    Ok(a.transpose() * inv)
}

/// Eigenvalues of a symmetric matrix, ascending.
///
/// The input is symmetrized first; callers that need the symmetry itself
/// checked use [`assert_symmetric`].
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let mut vals: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    vals.sort_by(|x, y| x.total_cmp(y));
    vals
}

pub fn lambda_max(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).last().copied().unwrap_or(0.0)
}

pub fn lambda_min(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).first().copied().unwrap_or(0.0)
}

/// Smallest eigenvalue strictly above `floor`, i.e. λ_min over the range space.
pub fn lambda_min_nonzero(a: &DMatrix<f64>, floor: f64) -> Option<f64> {
    sym_eigenvalues(a).into_iter().find(|&v| v > floor)
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    a.is_square() && (a - a.transpose()).amax() <= tol * (1.0 + a.amax())
}

/// Errors with [`Error::DimensionMismatch`] if `a` is not symmetric to [`SYMMETRY_TOL`].
pub fn assert_symmetric(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if is_symmetric(a, SYMMETRY_TOL) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("{what} is not symmetric")))
    }
}

/// 2-norm condition number via singular values; infinite for singular input.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let hi = sv.iter().copied().fold(0.0f64, f64::max);
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Numerical rank from singular values (relative threshold).
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = a.clone().singular_values();
    let hi = sv.iter().copied().fold(0.0f64, f64::max);
    sv.iter().filter(|&&s| s > rel_tol * hi.max(f64::MIN_POSITIVE)).count()
}

/// Block of agent `i` (length `n`) inside a stacked vector.
pub fn block(x: &DVector<f64>, i: usize, n: usize) -> DVector<f64> {
    x.rows(i * n, n).into_owned()
}

pub fn identity(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn pinv_of_identity() {
        let m = identity(2);
        let p = pseudo_inverse(&m).unwrap();
        assert!((p - identity(2)).amax() < 1e-15);
    }

    #[test]
    fn pinv_of_row() {
        let m = dmatrix![1.0, 1.0];
        let p = pseudo_inverse(&m).unwrap();
        assert!((p - dmatrix![0.5; 0.5]).amax() < 1e-15);
    }

    #[test]
    fn pinv_rank_deficient() {
        let m = dmatrix![1.0, 2.0; 2.0, 4.0];
        assert!(matches!(pseudo_inverse(&m), Err(Error::RankDeficient { .. })));
        let wide = dmatrix![1.0; 2.0];
        assert!(pseudo_inverse(&wide).is_err());
    }

    #[test]
    fn pinv_matches_svd_route() {
        let m = dmatrix![1.0, 2.0, 0.5; -0.3, 0.7, 2.0];
        let ours = pseudo_inverse(&m).unwrap();
        let svd = m.clone().pseudo_inverse(1e-14).unwrap();
        assert!((ours.clone() - svd).amax() < 1e-12);
        assert!((&m * ours - identity(2)).amax() < 1e-12);
    }

    #[test]
    fn eigen_helpers() {
        let a = dmatrix![2.0, 0.0; 0.0, -1.0];
        assert_eq!(lambda_max(&a), 2.0);
        assert_eq!(lambda_min(&a), -1.0);
        assert_eq!(lambda_min_nonzero(&dmatrix![0.0, 0.0; 0.0, 3.0], 1e-12), Some(3.0));
        assert_eq!(rank(&dmatrix![1.0, 0.0; 0.0, 0.0], 1e-12), 1);
    }
}
