//! Cyclic Jacobi eigensolvers for real symmetric and complex Hermitian
//! matrices.

use num_complex::Complex64;

use super::{ComplexMatrix, DenseMatrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenvalues in descending order; eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct HermEigen {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

/// Jacobi rotation `(c, s)` annihilating the `(p, q)` entry of a symmetric
/// 2×2 block with diagonal `app`, `aqq` and off-diagonal `apq`.
fn rotation(app: f64, aqq: f64, apq: f64) -> (f64, f64) {
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    (c, t * c)
}

pub fn sym_eigen(a: &DenseMatrix) -> Result<SymEigen> {
    if !a.is_square() {
        return Err(Error::dim(a.rows(), a.cols()));
    }
    let n = a.rows();
    let mut m = a.symmetrize();
    let mut v = DenseMatrix::identity(n);
    let scale: f64 = m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut converged = n <= 1 || scale == 0.0;
    let mut off = 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let (c, s) = rotation(m[(p, p)], m[(q, q)], apq);
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence { iterations: MAX_SWEEPS, residual: off.sqrt() });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok(SymEigen { values, vectors })
}

/// Hermitian eigendecomposition for small matrices (at most 64 rows).
///
/// Each Jacobi step first rotates the phase of column `q` so the pivot
/// becomes real, then applies an ordinary real rotation.
pub fn herm_eigen_small(a: &ComplexMatrix) -> Result<HermEigen> {
    if a.rows() != a.cols() {
        return Err(Error::dim(a.rows(), a.cols()));
    }
    let n = a.rows();
    if n > 64 {
        return Err(Error::InvalidArgument(format!("Hermitian eigensolver limited to 64 rows, got {n}")));
    }
    let mut m = a.clone();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)].conj());
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
        m[(i, i)] = Complex64::new(m[(i, i)].re, 0.0);
    }
    let mut v = ComplexMatrix::identity(n);
    let scale = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| m[(i, j)].norm_sqr()).sum::<f64>().sqrt();
    let mut converged = n <= 1 || scale == 0.0;
    let mut off = 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                let mag = apq.norm();
                if mag <= f64::MIN_POSITIVE {
                    continue;
                }
                // Phase: column q scaled by e^{-iφ}, row q by e^{iφ}.
                let phase = apq / mag;
                let cphase = phase.conj();
                for k in 0..n {
                    m[(k, q)] *= cphase;
                    v[(k, q)] *= cphase;
                }
                for k in 0..n {
                    m[(q, k)] *= phase;
                }
                let (c, s) = rotation(m[(p, p)].re, m[(q, q)].re, mag);
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = mkp * c - mkq * s;
                    m[(k, q)] = mkp * s + mkq * c;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = mpk * c - mqk * s;
                    m[(q, k)] = mpk * s + mqk * c;
                }
                m[(p, q)] = Complex64::new(0.0, 0.0);
                m[(q, p)] = Complex64::new(0.0, 0.0);
                m[(p, p)].im = 0.0;
                m[(q, q)].im = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c - vkq * s;
                    v[(k, q)] = vkp * s + vkq * c;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence { iterations: MAX_SWEEPS, residual: off.sqrt() });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].re.total_cmp(&m[(i, i)].re));
    let values = order.iter().map(|&i| m[(i, i)].re).collect();
    let mut vectors = ComplexMatrix::zeros(n, n);
    for (j, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, j)] = v[(i, src)];
        }
    }
    Ok(HermEigen { values, vectors })
}
