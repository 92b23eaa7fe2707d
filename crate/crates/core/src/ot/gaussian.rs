//! Closed-form squared 2-Wasserstein distance between Gaussians.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

const EIGEN_FLOOR: f64 = -1e-10;

fn check_symmetric(name: &str, s: &DMatrix<f64>) -> Result<()> {
    let scale = s.amax().max(1.0);
    for i in 0..s.nrows() {
        for j in 0..i {
            if (s[(i, j)] - s[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::Argument(format!("{name} is not symmetric")));
            }
        }
    }
    Ok(())
}

/// Symmetric PSD square root; eigenvalues in `[EIGEN_FLOOR, 0)` are clipped to zero.
pub(crate) fn psd_sqrt(name: &str, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < EIGEN_FLOOR * scale {
            return Err(Error::Argument(format!("{name} is not positive semidefinite (eigenvalue {v:.3e})")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

fn as_matrix(name: &str, d: usize, s: &[f64]) -> Result<DMatrix<f64>> {
    if s.len() != d * d {
        return Err(Error::Argument(format!("{name} must be {d} x {d}, got {} entries", s.len())));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("{name} has non-finite entries")));
    }
    let m = DMatrix::from_row_slice(d, d, s);
    check_symmetric(name, &m)?;
    Ok(m)
}

/// `|m0 - m1|^2 + tr(S0 + S1 - 2 (S1^{1/2} S0 S1^{1/2})^{1/2})` for row-major covariances.
pub fn gelbrich_w2sq(m0: &[f64], s0: &[f64], m1: &[f64], s1: &[f64]) -> Result<f64> {
    let d = m0.len();
    if d == 0 || m1.len() != d {
        return Err(Error::Argument(format!("mean dimensions {} and {} differ", d, m1.len())));
    }
    let a = as_matrix("first covariance", d, s0)?;
    let b = as_matrix("second covariance", d, s1)?;
    psd_sqrt("first covariance", &a)?;
    let b_half = psd_sqrt("second covariance", &b)?;
    let cross = &b_half * &a * &b_half;
    let cross_half = psd_sqrt("cross term", &cross)?;
    let mean_term: f64 = m0.iter().zip(m1).map(|(x, y)| (x - y) * (x - y)).sum();
    let value = mean_term + a.trace() + b.trace() - 2.0 * cross_half.trace();
    Ok(value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_gaussians() {
        let s = [2.0, 0.3, 0.3, 1.0];
        assert_abs_diff_eq!(gelbrich_w2sq(&[1.0, 2.0], &s, &[1.0, 2.0], &s).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn unit_shift() {
        let i = [1.0, 0.0, 0.0, 1.0];
        assert_abs_diff_eq!(gelbrich_w2sq(&[0.0, 0.0], &i, &[1.0, 0.0], &i).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn scalar_case() {
        let v = gelbrich_w2sq(&[0.3], &[0.04], &[0.7], &[0.09]).unwrap();
        assert_abs_diff_eq!(v, 0.16 + 0.01, epsilon = 1e-12);
    }

    #[test]
    fn commuting_diagonal_case() {
        // diagonal covariances: sum of per-axis scalar terms
        let v = gelbrich_w2sq(&[0.0, 0.0], &[4.0, 0.0, 0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0, 0.0, 9.0]).unwrap();
        assert_abs_diff_eq!(v, 1.0 + 1.0 + 4.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_covariances_are_accepted() {
        let v = gelbrich_w2sq(&[0.0, 0.0], &[1.0, 1.0, 1.0, 1.0], &[0.0, 0.0], &[0.0; 4]).unwrap();
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_bad_covariances() {
        let i = [1.0, 0.0, 0.0, 1.0];
        assert!(gelbrich_w2sq(&[0.0, 0.0], &[1.0, 0.5, 0.0, 1.0], &[0.0, 0.0], &i).is_err());
        assert!(gelbrich_w2sq(&[0.0, 0.0], &[1.0, 0.0, 0.0, -1.0], &[0.0, 0.0], &i).is_err());
        assert!(gelbrich_w2sq(&[0.0, 0.0], &[1.0], &[0.0, 0.0], &i).is_err());
        assert!(gelbrich_w2sq(&[0.0], &[1.0], &[0.0, 0.0], &i).is_err());
    }
}
