//! Symplectic model order reduction by the complex SVD of `Y = Q + iP`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{herm_eigen_small, ComplexMatrix, DenseMatrix};
use crate::systems::{PhaseState, SystemSpec};

pub const MAX_SNAPSHOTS: usize = 64;
const RANK_TOLERANCE: f64 = 1e-12;

/// Symplectic basis `V` (`2N × 2n`) with its symplectic inverse
/// `V⁺ = J_{2n}ᵀ Vᵀ J_{2N}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBasis", into = "RawBasis")]
pub struct ReducedBasis {
    v: DenseMatrix,
    v_plus: DenseMatrix,
    full_dim: usize,
    reduced_dim: usize,
}

#[derive(Clone, Serialize, Deserialize)]
struct RawBasis {
    full_dim: usize,
    reduced_dim: usize,
    v: DenseMatrix,
}

impl TryFrom<RawBasis> for ReducedBasis {
    type Error = Error;

    fn try_from(raw: RawBasis) -> Result<Self> {
        check_len(2 * raw.full_dim, raw.v.rows())?;
        check_len(2 * raw.reduced_dim, raw.v.cols())?;
        Self::from_matrix(raw.v)
    }
}

impl From<ReducedBasis> for RawBasis {
    fn from(b: ReducedBasis) -> Self {
        RawBasis { full_dim: b.full_dim, reduced_dim: b.reduced_dim, v: b.v }
    }
}

impl ReducedBasis {
    /// Wraps a basis matrix, rejecting it unless `VᵀJV = J` within `1e-10`.
    pub fn from_matrix(v: DenseMatrix) -> Result<Self> {
        if !v.rows().is_multiple_of(2) || !v.cols().is_multiple_of(2) || v.cols() > v.rows() || v.cols() == 0 {
            return Err(Error::InvalidArgument(format!("basis shape {}x{} is not 2N x 2n", v.rows(), v.cols())));
        }
        let full_dim = v.rows() / 2;
        let reduced_dim = v.cols() / 2;
        let defect = symplectic_defect(&v)?;
        if defect > 1e-10 {
            return Err(Error::InvalidArgument(format!("basis is not symplectic (defect {defect:e})")));
        }
        let jn = DenseMatrix::poisson(reduced_dim);
        let jbig = DenseMatrix::poisson(full_dim);
        let v_plus = jn.transpose().matmul(&v.transpose())?.matmul(&jbig)?;
        Ok(Self { v, v_plus, full_dim, reduced_dim })
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn v_plus(&self) -> &DenseMatrix {
        &self.v_plus
    }

    pub fn full_dim(&self) -> usize {
        self.full_dim
    }

    pub fn reduced_dim(&self) -> usize {
        self.reduced_dim
    }

    /// `‖VᵀJ_{2N}V − J_{2n}‖∞`.
    pub fn symplecticity_defect(&self) -> f64 {
        symplectic_defect(&self.v).expect("validated shape")
    }

    /// `x_red = V⁺ x`.
    pub fn restrict(&self, x: &PhaseState) -> Result<PhaseState> {
        check_len(self.full_dim, x.dof())?;
        PhaseState::from_flat(&self.v_plus.matvec(&x.to_flat())?)
    }

    /// `x = V x_red`.
    pub fn lift(&self, z: &PhaseState) -> Result<PhaseState> {
        check_len(self.reduced_dim, z.dof())?;
        PhaseState::from_flat(&self.v.matvec(&z.to_flat())?)
    }
}

/// `VᵀJ_{2N}V − J_{2n}` as a max-entry norm.
fn symplectic_defect(v: &DenseMatrix) -> Result<f64> {
    let jbig = DenseMatrix::poisson(v.rows() / 2);
    let jn = DenseMatrix::poisson(v.cols() / 2);
    Ok(v.transpose().matmul(&jbig)?.matmul(v)?.sub(&jn)?.max_abs())
}

/// Snapshot matrices `Q`, `P` (`N × M`) from a list of states.
pub fn snapshot_matrices(states: &[PhaseState]) -> Result<(DenseMatrix, DenseMatrix)> {
    let first = states.first().ok_or(Error::EmptySample)?;
    let n = first.dof();
    let mut q = DenseMatrix::zeros(n, states.len());
    let mut p = DenseMatrix::zeros(n, states.len());
    for (j, s) in states.iter().enumerate() {
        check_len(n, s.dof())?;
        for i in 0..n {
            q[(i, j)] = s.q[i];
            p[(i, j)] = s.p[i];
        }
    }
    Ok((q, p))
}

/// Complex SVD basis: the leading `reduced_n` left singular vectors `U` of
/// `Y = Q + iP`, taken through the eigendecomposition of `Y*Y`, assembled
/// as `V = [Re U, −Im U; Im U, Re U]`.
pub fn csvd_basis(q: &DenseMatrix, p: &DenseMatrix, reduced_n: usize) -> Result<ReducedBasis> {
    check_len(q.rows(), p.rows())?;
    check_len(q.cols(), p.cols())?;
    let (n_full, m) = (q.rows(), q.cols());
    if m > MAX_SNAPSHOTS {
        return Err(Error::TooManySnapshots(m));
    }
    if reduced_n == 0 || reduced_n > m.min(n_full) {
        return Err(Error::InvalidArgument(format!("reduced dimension {reduced_n} must lie in 1..={}", m.min(n_full))));
    }
    let y = ComplexMatrix::from_parts(q, p)?;
    let gram = y.adjoint().matmul(&y)?;
    let eig = herm_eigen_small(&gram)?;

    // σ_k = ‖Y w_k‖ is accurate even where the eigenvalue of Y*Y is lost
    // in roundoff.
    let mut columns: Vec<Vec<Complex64>> = Vec::with_capacity(m);
    let mut sigma = Vec::with_capacity(m);
    for k in 0..m {
        let col: Vec<Complex64> = (0..n_full).map(|i| (0..m).map(|j| y[(i, j)] * eig.vectors[(j, k)]).sum()).collect();
        sigma.push(col.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt());
        columns.push(col);
    }
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let rank = sigma.iter().filter(|&&s| s >= RANK_TOLERANCE * sigma_max && s > 0.0).count();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    if rank < reduced_n {
        return Err(Error::RankDeficient { rank });
    }

    // U = Y W Σ⁻¹, then one modified Gram–Schmidt pass to clean up roundoff.
    let mut u: Vec<Vec<Complex64>> = Vec::with_capacity(reduced_n);
    for &k in order.iter().take(reduced_n) {
        let mut col: Vec<Complex64> = columns[k].iter().map(|z| z / sigma[k]).collect();
        for prev in &u {
            let proj: Complex64 = prev.iter().zip(&col).map(|(a, b)| a.conj() * b).sum();
            for (c, a) in col.iter_mut().zip(prev) {
                *c -= proj * a;
            }
        }
        let norm = col.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt();
        if norm < 0.5 {
            return Err(Error::RankDeficient { rank: u.len() });
        }
        col.iter_mut().for_each(|z| *z /= norm);
        u.push(col);
    }

    let mut v = DenseMatrix::zeros(2 * n_full, 2 * reduced_n);
    for (k, col) in u.iter().enumerate() {
        for (i, z) in col.iter().enumerate() {
            v[(i, k)] = z.re;
            v[(i, reduced_n + k)] = -z.im;
            v[(n_full + i, k)] = z.im;
            v[(n_full + i, reduced_n + k)] = z.re;
        }
    }
    ReducedBasis::from_matrix(v)
}

/// `H_red = Vᵀ H V`, symmetrized.
pub fn reduce_quadratic(basis: &ReducedBasis, sys: &SystemSpec) -> Result<SystemSpec> {
    let h = sys.quadratic_matrix().ok_or(Error::NotQuadratic)?;
    check_len(2 * basis.full_dim, h.rows())?;
    let hr = basis.v.transpose().matmul(&h)?.matmul(&basis.v)?.symmetrize();
    SystemSpec::quadratic(hr)
}
