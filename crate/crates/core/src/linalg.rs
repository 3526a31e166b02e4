//! Small dense helpers shared by the filters and the fusion code.

use nalgebra::{Cholesky, Matrix3, SMatrix, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// `log det` of an SPD matrix via its Cholesky factor.
pub fn logdet<const N: usize>(m: &SMatrix<f64, N, N>) -> Result<f64> {
    let chol = Cholesky::new(*m).ok_or(Error::NotSpd("matrix"))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub fn is_spd<const N: usize>(m: &SMatrix<f64, N, N>) -> bool {
    m.iter().all(|v| v.is_finite()) && symmetric(m, 1e-9) && Cholesky::new(*m).is_some()
}

pub fn symmetric<const N: usize>(m: &SMatrix<f64, N, N>, tol: f64) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= tol * scale
}

pub fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// Inverse of an SPD matrix; fails with `NotSpd(what)` otherwise.
pub fn spd_inverse<const N: usize>(m: &SMatrix<f64, N, N>, what: &'static str) -> Result<SMatrix<f64, N, N>> {
    if !symmetric(m, 1e-9) {
        return Err(Error::NotSpd(what));
    }
    let chol = Cholesky::new(*m).ok_or(Error::NotSpd(what))?;
    Ok(symmetrize(&chol.inverse()))
}

pub fn check_spd<const N: usize>(m: &SMatrix<f64, N, N>, what: &'static str) -> Result<()> {
    if is_spd(m) {
        Ok(())
    } else {
        Err(Error::NotSpd(what))
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    let dm = nalgebra::DMatrix::from_iterator(N, N, symmetrize(m).iter().copied());
    dm.symmetric_eigenvalues().min()
}

/// Expected logdet reduction of `prior` after one isotropic position
/// measurement with per-axis variance `noise_var`.
pub fn isotropic_gain(prior: &Mat3, noise_var: f64) -> Result<f64> {
    let info = spd_inverse(prior, "prior covariance")?;
    let posterior = spd_inverse(&(info + Mat3::identity() / noise_var), "posterior covariance")?;
    Ok((logdet(prior)? - logdet(&posterior)?).max(0.0))
}

pub fn finite3(v: &Vec3) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logdet_of_diagonal() {
        let m = Mat3::from_diagonal(&Vec3::new(1.0, 2.0, 4.0));
        assert!((logdet(&m).unwrap() - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        let m = Mat3::from_diagonal(&Vec3::new(1.0, -2.0, 4.0));
        assert!(logdet(&m).is_err());
        assert!(spd_inverse(&m, "m").is_err());
        assert!(!is_spd(&m));
    }

    #[test]
    fn rejects_asymmetric() {
        let mut m = Mat3::identity();
        m[(0, 1)] = 0.5;
        assert!(spd_inverse(&m, "m").is_err());
    }

    #[test]
    fn isotropic_gain_closed_form() {
        let p = Mat3::identity() * 4.0;
        let g = isotropic_gain(&p, 1.0).unwrap();
        assert!((g - 3.0 * 5f64.ln()).abs() < 1e-12);
    }
}
