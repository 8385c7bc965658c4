use super::DenseMatrix;
use crate::error::{check_len, Error, Result};

/// Lower-triangular factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DenseMatrix,
}

impl Cholesky {
    /// Plain factorization, no jitter.
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dim(a.rows(), a.cols()));
        }
        let n = a.rows();
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn factor_lower(&self) -> &DenseMatrix {
        &self.l
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let y = forward_substitute(&self.l, b)?;
        backward_substitute_transposed(&self.l, &y)
    }
}

/// Solves `L y = b` for lower-triangular `L`.
pub(crate) fn forward_substitute(l: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    check_len(l.rows(), b.len())?;
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let row = l.row(i);
        let s: f64 = (0..i).map(|k| row[k] * y[k]).sum();
        y[i] = (b[i] - s) / row[i];
    }
    Ok(y)
}

/// Solves `Lᵀ x = y` for lower-triangular `L`.
pub(crate) fn backward_substitute_transposed(l: &DenseMatrix, y: &[f64]) -> Result<Vec<f64>> {
    check_len(l.rows(), y.len())?;
    let n = y.len();
    let mut x = y.to_vec();
    for i in (0..n).rev() {
        x[i] /= l[(i, i)];
        let xi = x[i];
        for k in 0..i {
            x[k] -= l[(i, k)] * xi;
        }
    }
    Ok(x)
}

/// Solves `A x = b` for symmetric positive definite `A`.
///
/// On factorization failure a diagonal shift `τ I` is tried, starting at
/// `1e-14 · mean(diag)` and growing tenfold up to `1e-8 · mean(diag)`.
pub fn cholesky_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::dim(a.rows(), a.cols()));
    }
    check_len(a.rows(), b.len())?;
    if !a.is_symmetric(1e-12) {
        return Err(Error::InvalidArgument("matrix is not symmetric".into()));
    }
    if let Ok(c) = Cholesky::factor(a) {
        return c.solve(b);
    }
    let n = a.rows();
    let mean_diag = a.diagonal().iter().sum::<f64>() / n as f64;
    if !(mean_diag > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    for exp in -14..=-8 {
        let tau = 10f64.powi(exp) * mean_diag;
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] += tau;
        }
        if let Ok(c) = Cholesky::factor(&shifted) {
            return c.solve(b);
        }
    }
    Err(Error::NotPositiveDefinite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm_inf;

    #[test]
    fn identity_system() {
        let x = cholesky_solve(&DenseMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn scalar_system() {
        let a = DenseMatrix::from_diag(&[4.0]);
        assert_eq!(cholesky_solve(&a, &[8.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn two_by_two() {
        let a = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let x = cholesky_solve(&a, &[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let err = cholesky_solve(&DenseMatrix::identity(2), &[1.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn indefinite_matrix_fails_after_jitter() {
        let a = DenseMatrix::from_diag(&[1.0, -1.0]);
        assert!(matches!(cholesky_solve(&a, &[1.0, 1.0]), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        // rank one, exactly singular
        let a = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let x = cholesky_solve(&a, &[2.0, 2.0]).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn residual_on_hilbert_like_matrix() {
        // moderately conditioned SPD matrix
        let n = 8;
        let a = DenseMatrix::from_fn(n, n, |i, j| 1.0 / (1.0 + (i as f64 - j as f64).abs()) + if i == j { 1.0 } else { 0.0 });
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = cholesky_solve(&a, &b).unwrap();
        let r: Vec<f64> = a.matvec(&x).unwrap().iter().zip(&b).map(|(u, v)| u - v).collect();
        assert!(norm_inf(&r) <= 1e-10 * (1.0 + norm_inf(&b)));
    }
}
