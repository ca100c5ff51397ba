//! Small dense linear-algebra helpers on top of nalgebra.
//!
//! Every inverse in the crate goes through [`spd_solve`]; nothing forms an
//! explicit inverse.

use nalgebra::{DMatrix, DVector};

use crate::error::{FafError, Result};

/// Symmetry tolerance, relative to the largest entry (absolute below 1).
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Smallest eigenvalue must exceed this fraction of the largest.
pub const SPD_EIG_RATIO: f64 = 1e-12;
/// Cholesky pivot threshold for rank detection, relative to the largest pivot.
pub const PIVOT_RATIO: f64 = 1e-12;

pub fn is_symmetric(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return false;
            }
        }
    }
    true
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::NAN)
}

/// Validate that `m` is a finite symmetric positive definite matrix.
pub fn check_spd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let not_spd = |reason: String| FafError::NotSpd {
        matrix: name.to_string(),
        reason,
    };
    if !m.is_square() {
        return Err(not_spd(format!("shape {}x{} is not square", m.nrows(), m.ncols())));
    }
    if m.nrows() == 0 {
        return Err(not_spd("empty matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(not_spd("non-finite entry".into()));
    }
    if !is_symmetric(m) {
        return Err(not_spd("not symmetric".into()));
    }
    let ev = sym_eigenvalues(m);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if hi <= 0.0 || lo <= SPD_EIG_RATIO * hi {
        return Err(not_spd(format!(
            "smallest eigenvalue {lo:e} is not positive relative to largest {hi:e}"
        )));
    }
    Ok(())
}

/// Lower-triangular Cholesky factor of an SPD matrix.
pub fn cholesky_lower(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.unpack())
        .ok_or_else(|| FafError::NotSpd {
            matrix: name.to_string(),
            reason: "Cholesky factorization failed".into(),
        })
}

/// Solve `a x = b` for symmetric positive (semi)definite `a`.
///
/// Rank deficiency is detected through the Cholesky pivots: a failed
/// factorization or a squared pivot below `PIVOT_RATIO` times the largest
/// squared pivot is reported as [`FafError::RankDeficient`].
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(FafError::dim(format!("right-hand side of {what}"), a.nrows(), b.len()));
    }
    let rank_err = |min_pivot: f64, max_pivot: f64| FafError::RankDeficient {
        what: what.to_string(),
        min_pivot,
        max_pivot,
    };
    let max_diag = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(*v));
    let chol = a.clone().cholesky().ok_or_else(|| rank_err(0.0, max_diag))?;
    let l = chol.l_dirty();
    let pivots: Vec<f64> = (0..a.nrows()).map(|i| l[(i, i)] * l[(i, i)]).collect();
    let lo = pivots.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pivots.iter().copied().fold(0.0, f64::max);
    if !(lo > PIVOT_RATIO * hi) {
        return Err(rank_err(lo, hi));
    }
    let x = chol.solve(b);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FafError::Numerical(format!("non-finite solution of {what}")));
    }
    Ok(x)
}

/// Same as [`spd_solve`] for a matrix right-hand side.
pub fn spd_solve_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(b.nrows(), b.ncols());
    for j in 0..b.ncols() {
        let col = spd_solve(a, &b.column(j).into_owned(), what)?;
        out.set_column(j, &col);
    }
    Ok(out)
}

/// `‖v‖²_A = vᵀ A v`.
pub fn mahalanobis_sq(v: &DVector<f64>, a: &DMatrix<f64>) -> f64 {
    v.dot(&(a * v))
}

pub fn scaled_identity(d: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::identity(d, d) * scale
}

/// Spectral norm of a symmetric matrix.
pub fn sym_operator_norm(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_check_accepts_identity_and_rejects_indefinite() {
        assert!(check_spd(&DMatrix::identity(3, 3), "I").is_ok());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = check_spd(&m, "red.sigma").unwrap_err();
        assert!(err.to_string().contains("red.sigma"));
    }

    #[test]
    fn spd_check_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.0, 2.0]);
        assert!(check_spd(&m, "m").is_err());
    }

    #[test]
    fn solve_matches_known_system() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = spd_solve(&a, &b, "a").unwrap();
        // Cramer's rule: det = 11
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn solve_reports_rank_deficiency() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        match spd_solve(&a, &b, "sigma_hat_red") {
            Err(FafError::RankDeficient { what, .. }) => assert_eq!(what, "sigma_hat_red"),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }
}
