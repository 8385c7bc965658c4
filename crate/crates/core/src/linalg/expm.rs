use super::{DenseMatrix, Lu};
use crate::error::{Error, Result};

/// Diagonal Padé(6,6) coefficients for `exp`.
const PADE6: [f64; 7] = [1.0, 1.0 / 2.0, 5.0 / 44.0, 1.0 / 66.0, 1.0 / 792.0, 1.0 / 15840.0, 1.0 / 665280.0];

/// Matrix exponential by scaling and squaring around a Padé(6,6) core.
///
/// The argument is scaled by `2^-s` so that its 1-norm is at most 1/2.
pub fn expm(a: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(Error::dim(a.rows(), a.cols()));
    }
    let n = a.rows();
    let norm = a.norm_1();
    if !norm.is_finite() {
        return Err(Error::Overflow);
    }
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let x = a.scale(2f64.powi(-squarings));

    let mut num = DenseMatrix::identity(n);
    let mut den = DenseMatrix::identity(n);
    let mut power = DenseMatrix::identity(n);
    for (k, &c) in PADE6.iter().enumerate().skip(1) {
        power = power.matmul(&x)?;
        let term = power.scale(c);
        num = num.add(&term)?;
        den = if k % 2 == 0 { den.add(&term)? } else { den.sub(&term)? };
    }
    let mut r = Lu::factor(&den)?.solve_matrix(&num)?;
    for _ in 0..squarings {
        r = r.matmul(&r)?;
        if !r.as_slice().iter().all(|v| v.is_finite()) {
            return Err(Error::Overflow);
        }
    }
    if !r.as_slice().iter().all(|v| v.is_finite()) {
        return Err(Error::Overflow);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, FRAC_PI_2};

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(expm(&DenseMatrix::zeros(3, 3)).unwrap(), DenseMatrix::identity(3));
    }

    #[test]
    fn scalar_exponential() {
        let r = expm(&DenseMatrix::from_diag(&[1.0])).unwrap();
        assert!((r[(0, 0)] - E).abs() <= 1e-15 * E);
    }

    #[test]
    fn quarter_turn_rotation() {
        let r = expm(&DenseMatrix::poisson(1).scale(FRAC_PI_2)).unwrap();
        let expected = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        assert!(r.sub(&expected).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn large_norm_relative_accuracy() {
        // diag(10, -3) plus a nilpotent part with known closed form
        let a = DenseMatrix::from_rows(&[vec![10.0, 0.0], vec![0.0, -3.0]]).unwrap();
        let r = expm(&a).unwrap();
        assert!((r[(0, 0)] / 10f64.exp() - 1.0).abs() < 1e-10);
        assert!((r[(1, 1)] / (-3f64).exp() - 1.0).abs() < 1e-10);
        let nil = DenseMatrix::from_rows(&[vec![2.0, 7.0], vec![0.0, 2.0]]).unwrap();
        let r = expm(&nil).unwrap();
        let e2 = 2f64.exp();
        assert!((r[(0, 1)] / (7.0 * e2) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn overflow_detected() {
        assert!(matches!(expm(&DenseMatrix::from_diag(&[1e6])), Err(Error::Overflow)));
    }

    #[test]
    fn inverse_pair() {
        let a = DenseMatrix::from_fn(4, 4, |i, j| ((i + 2 * j) % 5) as f64 * 0.3 - 0.6);
        let p = expm(&a).unwrap().matmul(&expm(&a.scale(-1.0)).unwrap()).unwrap();
        assert!(p.sub(&DenseMatrix::identity(4)).unwrap().max_abs() < 1e-9);
    }
}
