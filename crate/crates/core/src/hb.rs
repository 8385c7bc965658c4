//! Gradient Hermite–Birkhoff interpolation: derivative functionals, the
//! generalized Gram matrix, the minimum-norm interpolant and its power
//! function.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::{cholesky_solve, Dd, DenseMatrix};

/// Point evaluation of the partial derivative `∂_coord f(center)`.
/// Coordinates are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivFunctional {
    pub center: Vec<f64>,
    pub coord: usize,
}

impl DerivFunctional {
    pub fn new(center: Vec<f64>, coord: usize) -> Result<Self> {
        if coord >= center.len() {
            return Err(Error::InvalidCoordinate { coord, dim: center.len() });
        }
        if let Some(i) = center.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { center, coord })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    fn key(&self) -> (Vec<u64>, usize) {
        (self.center.iter().map(|v| v.to_bits()).collect(), self.coord)
    }
}

/// `s(x) = Σ_j c_j ∂^{(2)}_{α_j} k(x, x_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub kernel: KernelSpec,
    pub dim: usize,
    pub functionals: Vec<DerivFunctional>,
    pub coeffs: Vec<f64>,
}

impl Surrogate {
    pub fn empty(kernel: KernelSpec, dim: usize) -> Self {
        Self { kernel, dim, functionals: Vec::new(), coeffs: Vec::new() }
    }

    /// Assembles a surrogate from given coefficients, validating shapes.
    pub fn from_parts(kernel: KernelSpec, dim: usize, functionals: Vec<DerivFunctional>, coeffs: Vec<f64>) -> Result<Self> {
        check_len(functionals.len(), coeffs.len())?;
        check_functionals(dim, &functionals)?;
        if let Some(i) = coeffs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { kernel, dim, functionals, coeffs })
    }

    pub fn len(&self) -> usize {
        self.functionals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functionals.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_len(self.dim, x.len())?;
        Ok(self.functionals.iter().zip(&self.coeffs).map(|(f, c)| c * self.kernel.grad2_component(x, &f.center, f.coord)).sum())
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, x.len())?;
        let mut g = vec![0.0; self.dim];
        self.grad_into(x, &mut g);
        Ok(g)
    }

    /// Unchecked gradient accumulation into `out` (length `dim`).
    pub(crate) fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut col = vec![0.0; self.dim];
        for (f, c) in self.functionals.iter().zip(&self.coeffs) {
            self.kernel.mixed2_column(x, &f.center, f.coord, &mut col);
            for (o, v) in out.iter_mut().zip(&col) {
                *o += c * v;
            }
        }
    }

    /// Gradient evaluated in double-double and rounded once. The sum over
    /// centers cancels heavily for flat kernels, so plain accumulation
    /// carries roundoff of order `u · Σ|c_j|`; this keeps the result
    /// accurate and smooth in `x` to working precision.
    pub fn grad_precise(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, x.len())?;
        let mut g = vec![0.0; self.dim];
        self.grad_precise_into(x, &mut g);
        Ok(g)
    }

    pub(crate) fn grad_precise_into(&self, x: &[f64], out: &mut [f64]) {
        let mut acc = vec![Dd::ZERO; self.dim];
        let mut d = vec![Dd::ZERO; self.dim];
        for (f, c) in self.functionals.iter().zip(&self.coeffs) {
            self.kernel.mixed2_column_acc_dd(x, &f.center, f.coord, *c, &mut acc, &mut d);
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = a.to_f64();
        }
    }

    /// Single gradient component `∂_α s(x)`.
    pub fn grad_component(&self, x: &[f64], alpha: usize) -> Result<f64> {
        check_len(self.dim, x.len())?;
        if alpha >= self.dim {
            return Err(Error::InvalidCoordinate { coord: alpha, dim: self.dim });
        }
        Ok(self.functionals.iter().zip(&self.coeffs).map(|(f, c)| c * self.kernel.mixed2_unchecked(x, &f.center, alpha, f.coord)).sum())
    }
}

fn check_functionals(dim: usize, functionals: &[DerivFunctional]) -> Result<()> {
    for f in functionals {
        check_len(dim, f.center.len())?;
        if f.coord >= dim {
            return Err(Error::InvalidCoordinate { coord: f.coord, dim });
        }
    }
    Ok(())
}

fn check_distinct(functionals: &[DerivFunctional]) -> Result<()> {
    let mut seen = HashSet::with_capacity(functionals.len());
    for (index, f) in functionals.iter().enumerate() {
        if !seen.insert(f.key()) {
            return Err(Error::DuplicateFunctional { index, coord: f.coord });
        }
    }
    Ok(())
}

/// `G_{ij} = ∂^{(1)}_{α_i} ∂^{(2)}_{α_j} k(x_i, x_j)`.
pub fn gram_matrix(kernel: &KernelSpec, functionals: &[DerivFunctional]) -> Result<DenseMatrix> {
    let first = functionals.first().ok_or(Error::EmptyDataset)?;
    check_functionals(first.dim(), functionals)?;
    Ok(cross_gram(kernel, functionals, functionals))
}

fn cross_gram(kernel: &KernelSpec, a: &[DerivFunctional], b: &[DerivFunctional]) -> DenseMatrix {
    let mut g = DenseMatrix::zeros(a.len(), b.len());
    let symmetric = std::ptr::eq(a, b);
    for i in 0..a.len() {
        let start = if symmetric { i } else { 0 };
        for j in start..b.len() {
            let v = kernel.mixed2_unchecked(&a[i].center, &b[j].center, a[i].coord, b[j].coord);
            g[(i, j)] = v;
            if symmetric {
                g[(j, i)] = v;
            }
        }
    }
    g
}

/// Minimum-norm interpolant of `∂_{α_j} s(x_j) = y_j`.
pub fn fit(kernel: &KernelSpec, functionals: &[DerivFunctional], targets: &[f64]) -> Result<Surrogate> {
    check_len(functionals.len(), targets.len())?;
    let g = gram_matrix(kernel, functionals)?;
    check_distinct(functionals)?;
    let coeffs = cholesky_solve(&g, targets)?;
    Ok(Surrogate { kernel: *kernel, dim: functionals[0].dim(), functionals: functionals.to_vec(), coeffs })
}

/// `P(x, ℓ) = √max(0, k_ℓℓ(x, x) − vᵀ G⁻¹ v)`.
pub fn power_function(kernel: &KernelSpec, selected: &[DerivFunctional], query: &DerivFunctional) -> Result<f64> {
    let diag = kernel.mixed2(&query.center, &query.center, query.coord, query.coord)?;
    if selected.is_empty() {
        return Ok(diag.max(0.0).sqrt());
    }
    check_functionals(query.dim(), selected)?;
    check_distinct(selected)?;
    let g = gram_matrix(kernel, selected)?;
    let v: Vec<f64> = selected.iter().map(|f| kernel.mixed2_unchecked(&query.center, &f.center, query.coord, f.coord)).collect();
    let w = cholesky_solve(&g, &v)?;
    let proj: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
    Ok((diag - proj).max(0.0).sqrt())
}

/// RKHS inner product `c_Aᵀ G_AB c_B` of two surrogates.
pub fn rkhs_inner(a: &Surrogate, b: &Surrogate) -> Result<f64> {
    check_len(a.dim, b.dim)?;
    if a.kernel != b.kernel {
        return Err(Error::InvalidArgument("rkhs_inner needs a common kernel".into()));
    }
    let mut total = 0.0;
    for (fa, ca) in a.functionals.iter().zip(&a.coeffs) {
        let row: f64 = b
            .functionals
            .iter()
            .zip(&b.coeffs)
            .map(|(fb, cb)| cb * a.kernel.mixed2_unchecked(&fa.center, &fb.center, fa.coord, fb.coord))
            .sum();
        total += ca * row;
    }
    Ok(total)
}

/// `s_A − s_B` as a surrogate over the concatenated functionals (may hold
/// repeated functionals, which is harmless for evaluation and inner products).
pub fn difference(a: &Surrogate, b: &Surrogate) -> Result<Surrogate> {
    check_len(a.dim, b.dim)?;
    let mut functionals = a.functionals.clone();
    functionals.extend(b.functionals.iter().cloned());
    let mut coeffs = a.coeffs.clone();
    coeffs.extend(b.coeffs.iter().map(|c| -c));
    Ok(Surrogate { kernel: a.kernel, dim: a.dim, functionals, coeffs })
}

/// Macro-step training data `ξ_j = (q₀, p_ΔT)`, `y_j = Jᵀ(x_ΔT − x₀)/ΔT`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub delta_t: f64,
    pub system: String,
    pub scenario: String,
}

impl HbDataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, delta_t: f64, system: &str, scenario: &str) -> Result<Self> {
        check_len(inputs.len(), targets.len())?;
        if !(delta_t > 0.0) {
            return Err(Error::InvalidArgument(format!("ΔT must be positive, got {delta_t}")));
        }
        if let Some(first) = inputs.first() {
            let d = first.len();
            for (j, (x, y)) in inputs.iter().zip(&targets).enumerate() {
                check_len(d, x.len())?;
                check_len(d, y.len())?;
                if x.iter().chain(y).any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(j));
                }
            }
        }
        Ok(Self { inputs, targets, delta_t, system: system.to_string(), scenario: scenario.to_string() })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Phase-space dimension `2n`; zero for an empty dataset.
    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// Subset by point indices, keeping metadata.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
            delta_t: self.delta_t,
            system: self.system.clone(),
            scenario: self.scenario.clone(),
        }
    }

    /// Flattened candidate pool `{(ξ_j, α)}`, point-major.
    pub fn functionals(&self) -> Vec<DerivFunctional> {
        let d = self.dim();
        self.inputs.iter().flat_map(|x| (0..d).map(move |a| DerivFunctional { center: x.clone(), coord: a })).collect()
    }

    pub fn flat_targets(&self) -> Vec<f64> {
        self.targets.iter().flatten().copied().collect()
    }
}
