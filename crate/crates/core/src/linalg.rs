//! Small dense complex linear algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Reciprocal condition numbers below this are treated as singular.
pub const SINGULAR_RCOND: f64 = 1e-12;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn real_diag(values: &[f64]) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(
        values.len(),
        values.iter().map(|&v| c(v, 0.0)),
    ))
}

pub fn scaled_identity(n: usize, s: f64) -> CMat {
    CMat::identity(n, n) * c(s, 0.0)
}

/// Largest entrywise deviation from Hermitian symmetry, relative to the
/// largest entry magnitude.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let diff = (a - a.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    diff / scale
}

pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * c(0.5, 0.0)
}

/// Ascending eigenvalues of the Hermitian part of `a`.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let mut ev: Vec<f64> = hermitian_part(a).symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Principal square root of a Hermitian PSD matrix. Negative eigenvalues
/// (numerical noise) are clamped to zero.
pub fn hermitian_sqrt(a: &CMat) -> Result<CMat> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "square root of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Factorization("non-finite covariance entry".into()));
    }
    let n = a.nrows();
    if a.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return Ok(CMat::zeros(n, n));
    }
    // Diagonal fast path, which is the common covariance model.
    let off_diag = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .all(|(i, j)| a[(i, j)] == C64::new(0.0, 0.0));
    if off_diag && (0..n).all(|i| a[(i, i)].im == 0.0) {
        return Ok(CMat::from_fn(n, n, |i, j| {
            if i == j {
                c(a[(i, i)].re.max(0.0).sqrt(), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }));
    }
    let eig = hermitian_part(a).symmetric_eigen();
    let u = &eig.eigenvectors;
    let d = CVec::from_iterator(n, eig.eigenvalues.iter().map(|&l| c(l.max(0.0).sqrt(), 0.0)));
    Ok(u * CMat::from_diagonal(&d) * u.adjoint())
}

/// Solves `a x = b` for Hermitian positive definite `a`, falling back to LU
/// when the Cholesky factorization breaks down.
pub fn hpd_solve(a: &CMat, b: &CMat) -> Result<CMat> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular {
            rcond: 0.0,
            context: "Hermitian solve".into(),
        })
}

pub fn hpd_solve_vec(a: &CMat, b: &CVec) -> Result<CVec> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    a.clone().lu().solve(b).ok_or_else(|| Error::Singular {
        rcond: 0.0,
        context: "Hermitian solve".into(),
    })
}

fn one_norm(a: &CMat) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Reciprocal 1-norm condition number, computed through the explicit
/// inverse. Intended for the small systems of this crate.
pub fn rcond(a: &CMat) -> f64 {
    let na = one_norm(a);
    if na == 0.0 {
        return 0.0;
    }
    match a.clone().try_inverse() {
        Some(inv) => {
            let ni = one_norm(&inv);
            if ni.is_finite() && ni > 0.0 {
                1.0 / (na * ni)
            } else {
                0.0
            }
        }
        None => 0.0,
    }
}

/// General solve with a conditioning check. Returns the solution and the
/// reciprocal condition number.
pub fn checked_solve(a: &CMat, b: &CVec, context: &str) -> Result<(CVec, f64)> {
    let rc = rcond(a);
    if !(rc >= SINGULAR_RCOND) {
        return Err(Error::Singular {
            rcond: rc,
            context: context.to_string(),
        });
    }
    let x = a.clone().lu().solve(b).ok_or_else(|| Error::Singular {
        rcond: rc,
        context: context.to_string(),
    })?;
    Ok((x, rc))
}

/// Spectral radius of a real square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Standard circularly symmetric complex Gaussian vector, CN(0, I).
pub fn cn_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| cn_scalar(rng))
}

pub fn cn_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| cn_scalar(rng))
}

pub fn cn_scalar<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re * std::f64::consts::FRAC_1_SQRT_2, im * std::f64::consts::FRAC_1_SQRT_2)
}

/// `x^H a x` for Hermitian `a`, returned as a real number.
pub fn quad_form(a: &CMat, x: &CVec) -> f64 {
    x.dotc(&(a * x)).re
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_of_general_hermitian_squares_back() {
        let a = CMat::from_row_slice(
            2,
            2,
            &[c(2.0, 0.0), c(0.5, 0.5), c(0.5, -0.5), c(1.0, 0.0)],
        );
        let s = hermitian_sqrt(&a).unwrap();
        let back = &s * &s;
        assert!((back - &a).norm() < 1e-12);
        assert!(hermitian_defect(&s) < 1e-12);
    }

    #[test]
    fn sqrt_clamps_tiny_negative_eigenvalues() {
        let a = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(1.0 - 1e-15, 0.0)]);
        let s = hermitian_sqrt(&a).unwrap();
        assert!(s.iter().all(|z| z.re.is_finite()));
    }

    #[test]
    fn rcond_flags_singular() {
        let a = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)]);
        assert!(rcond(&a) < SINGULAR_RCOND);
        let b = CVec::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(checked_solve(&a, &b, "t"), Err(Error::Singular { .. })));
        assert!((rcond(&CMat::identity(3, 3)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spectral_radius_of_rotation_like_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.2, 0.1, 0.0]);
        assert!((spectral_radius(&m) - 0.02f64.sqrt()).abs() < 1e-12);
    }
}
