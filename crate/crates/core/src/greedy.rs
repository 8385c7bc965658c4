//! f-greedy selection of derivative functionals.
//!
//! The interpolant is grown one functional at a time in the Newton basis
//! `v_1, …, v_m` of the selected span. Column `v_m` over the whole candidate
//! pool is one column of the Cholesky factor of the pool Gram matrix, so the
//! residual and power-function updates are rank-one and cost `O(M m)` per
//! step for a pool of size `M`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::hb::{difference, rkhs_inner, DerivFunctional, HbDataset, Surrogate};
use crate::kernels::KernelSpec;
use crate::linalg::{backward_substitute_transposed, DenseMatrix};

/// Selection stops once the power value at the chosen functional drops below this.
pub const DEGENERATE_POWER: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreedyConfig {
    pub max_centers: usize,
    pub residual_tolerance: f64,
    #[serde(default = "yes")]
    pub record_power_values: bool,
}

fn yes() -> bool {
    true
}

impl GreedyConfig {
    pub fn new(max_centers: usize, residual_tolerance: f64) -> Result<Self> {
        let cfg = Self { max_centers, residual_tolerance, record_power_values: true };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_centers == 0 {
            return Err(Error::InvalidArgument("max_centers must be at least 1".into()));
        }
        if !(self.residual_tolerance >= 0.0) {
            return Err(Error::InvalidArgument("residual_tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// State before the `(iter+1)`-th selection: `s_iter` has `iter` terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyRecord {
    pub iter: usize,
    /// Index into the flattened candidate pool.
    pub selected_index: usize,
    pub coord: usize,
    /// `a_m = max |residual|` over unselected candidates.
    pub max_residual: f64,
    /// `b_m = P_m` at the selected functional.
    pub power_value: Option<f64>,
    /// `‖u − s_m‖` in synthetic mode.
    pub rkhs_error: Option<f64>,
    /// Max residual over the validation pool, when one is supplied.
    pub validation_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxCenters,
    Tolerance,
    DegeneratePower,
    PoolExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyTrace {
    pub dim: usize,
    pub records: Vec<GreedyRecord>,
    /// Max residual over the whole pool after the last selection.
    pub final_max_residual: f64,
    pub final_validation_error: Option<f64>,
    pub final_rkhs_error: Option<f64>,
    pub stop_reason: StopReason,
}

impl GreedyTrace {
    pub fn centers(&self) -> usize {
        self.records.len()
    }

    /// `(m, E_X(m))` for `m = 0..=centers`, training pool.
    pub fn training_curve(&self) -> Vec<(usize, f64)> {
        let mut c: Vec<(usize, f64)> = self.records.iter().map(|r| (r.iter, r.max_residual)).collect();
        c.push((self.records.len(), self.final_max_residual));
        c
    }

    /// `(m, E_val(m))`, empty without a validation pool.
    pub fn validation_curve(&self) -> Vec<(usize, f64)> {
        let mut c: Vec<(usize, f64)> = self.records.iter().filter_map(|r| r.validation_error.map(|v| (r.iter, v))).collect();
        if let Some(v) = self.final_validation_error {
            c.push((self.records.len(), v));
        }
        c
    }

    /// `‖e_m‖` for `m = 0..=centers` in synthetic mode.
    pub fn rkhs_errors(&self) -> Option<Vec<f64>> {
        let mut v: Vec<f64> = self.records.iter().map(|r| r.rkhs_error).collect::<Option<_>>()?;
        v.push(self.final_rkhs_error?);
        Some(v)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "iter,selected_index,coord,max_residual,power_value,rkhs_error")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{:e},{},{}",
                r.iter,
                r.selected_index,
                r.coord,
                r.max_residual,
                r.power_value.map(|v| format!("{v:e}")).unwrap_or_default(),
                r.rkhs_error.map(|v| format!("{v:e}")).unwrap_or_default(),
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }
}

/// Candidate pool with targets; the engine is shared by all training modes.
struct Pool<'a> {
    functionals: &'a [DerivFunctional],
    residual: Vec<f64>,
    basis: Vec<Vec<f64>>,
}

impl<'a> Pool<'a> {
    fn new(functionals: &'a [DerivFunctional], targets: Vec<f64>) -> Self {
        Self { functionals, residual: targets, basis: Vec::new() }
    }

    /// New Newton-basis column `v_m(ℓ_i) = (G(ℓ_i, ℓ_sel) − Σ_k v_k(ℓ_i) v_k(ℓ_sel)) / b`.
    fn extend(&mut self, kernel: &KernelSpec, chosen: &DerivFunctional, chosen_basis: &[f64], b: f64, beta: f64) {
        let mut col = gram_column(kernel, self.functionals, chosen);
        for (vk, &w) in self.basis.iter().zip(chosen_basis) {
            if w != 0.0 {
                for (c, v) in col.iter_mut().zip(vk) {
                    *c -= w * v;
                }
            }
        }
        let inv = 1.0 / b;
        for (c, r) in col.iter_mut().zip(self.residual.iter_mut()) {
            *c *= inv;
            *r -= beta * *c;
        }
        self.basis.push(col);
    }

    fn max_abs_residual(&self) -> f64 {
        self.residual.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[cfg(feature = "parallel")]
fn gram_column(kernel: &KernelSpec, pool: &[DerivFunctional], chosen: &DerivFunctional) -> Vec<f64> {
    use rayon::prelude::*;
    pool.par_iter().with_min_len(256).map(|f| kernel.mixed2_unchecked(&f.center, &chosen.center, f.coord, chosen.coord)).collect()
}

#[cfg(not(feature = "parallel"))]
fn gram_column(kernel: &KernelSpec, pool: &[DerivFunctional], chosen: &DerivFunctional) -> Vec<f64> {
    pool.iter().map(|f| kernel.mixed2_unchecked(&f.center, &chosen.center, f.coord, chosen.coord)).collect()
}

/// Greedy engine over a training pool, an optional validation pool and an
/// optional RKHS target.
fn run(
    kernel: &KernelSpec,
    dim: usize,
    train: &[DerivFunctional],
    train_targets: Vec<f64>,
    validation: Option<(&[DerivFunctional], Vec<f64>)>,
    target: Option<&Surrogate>,
    cfg: &GreedyConfig,
) -> Result<(Surrogate, GreedyTrace)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m_pool = train.len();
    let mut pool = Pool::new(train, train_targets);
    let mut val = validation.map(|(f, y)| Pool::new(f, y));
    let mut power2 = vec![kernel.mixed_diagonal(); m_pool];
    let mut selected_mask = vec![false; m_pool];
    let mut selected: Vec<usize> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut records = Vec::new();

    let rkhs_error = |selected: &[usize], betas: &[f64], basis: &[Vec<f64>]| -> Result<Option<f64>> {
        let Some(u) = target else { return Ok(None) };
        let s = assemble(kernel, dim, train, selected, betas, basis)?;
        let e = difference(u, &s)?;
        Ok(Some(rkhs_inner(&e, &e)?.max(0.0).sqrt()))
    };

    let stop_reason = loop {
        if selected.len() >= cfg.max_centers {
            break StopReason::MaxCenters;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in pool.residual.iter().enumerate() {
            if !selected_mask[i] && best.is_none_or(|(_, a)| r.abs() > a) {
                best = Some((i, r.abs()));
            }
        }
        let Some((sel, a)) = best else {
            break StopReason::PoolExhausted;
        };
        if a < cfg.residual_tolerance {
            break StopReason::Tolerance;
        }
        let b = power2[sel].max(0.0).sqrt();
        if b < DEGENERATE_POWER {
            break StopReason::DegeneratePower;
        }
        let m = selected.len();
        records.push(GreedyRecord {
            iter: m,
            selected_index: sel,
            coord: train[sel].coord,
            max_residual: a,
            power_value: cfg.record_power_values.then_some(b),
            rkhs_error: rkhs_error(&selected, &betas, &pool.basis)?,
            validation_error: val.as_ref().map(Pool::max_abs_residual),
        });

        let beta = pool.residual[sel] / b;
        let chosen_basis: Vec<f64> = pool.basis.iter().map(|v| v[sel]).collect();
        if let Some(v) = val.as_mut() {
            v.extend(kernel, &train[sel], &chosen_basis, b, beta);
        }
        pool.extend(kernel, &train[sel], &chosen_basis, b, beta);
        let newest = pool.basis.last().expect("just pushed");
        for (p, v) in power2.iter_mut().zip(newest) {
            *p -= v * v;
        }
        selected_mask[sel] = true;
        selected.push(sel);
        betas.push(beta);
    };

    let surrogate = assemble(kernel, dim, train, &selected, &betas, &pool.basis)?;
    let final_rkhs_error = rkhs_error(&selected, &betas, &pool.basis)?;
    let trace = GreedyTrace {
        dim,
        records,
        final_max_residual: pool.max_abs_residual(),
        final_validation_error: val.as_ref().map(Pool::max_abs_residual),
        final_rkhs_error,
        stop_reason,
    };
    Ok((surrogate, trace))
}

/// Coefficients `c = L⁻ᵀ β` where `L_{kj} = v_j(ℓ_{sel_k})`.
fn assemble(
    kernel: &KernelSpec,
    dim: usize,
    pool: &[DerivFunctional],
    selected: &[usize],
    betas: &[f64],
    basis: &[Vec<f64>],
) -> Result<Surrogate> {
    let m = selected.len();
    let l = DenseMatrix::from_fn(m, m, |k, j| if j <= k { basis[j][selected[k]] } else { 0.0 });
    let coeffs = backward_substitute_transposed(&l, betas)?;
    Ok(Surrogate { kernel: *kernel, dim, functionals: selected.iter().map(|&i| pool[i].clone()).collect(), coeffs })
}

/// Data mode: the pool is every coordinate of every input point.
pub fn train_f_greedy(kernel: &KernelSpec, data: &HbDataset, cfg: &GreedyConfig) -> Result<(Surrogate, GreedyTrace)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pool = data.functionals();
    run(kernel, data.dim(), &pool, data.flat_targets(), None, None, cfg)
}

/// Data mode with a held-out pool whose max residual is tracked every step.
pub fn train_f_greedy_with_validation(
    kernel: &KernelSpec,
    train: &HbDataset,
    validation: &HbDataset,
    cfg: &GreedyConfig,
) -> Result<(Surrogate, GreedyTrace)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !validation.is_empty() {
        check_len(train.dim(), validation.dim())?;
    }
    let pool = train.functionals();
    let val_pool = validation.functionals();
    run(kernel, train.dim(), &pool, train.flat_targets(), Some((&val_pool, validation.flat_targets())), None, cfg)
}

/// Synthetic mode: the target is an RKHS element `u`, candidates are given
/// explicitly, and `‖u − s_m‖` is tracked through `rkhs_inner`.
pub fn train_f_greedy_synthetic(
    kernel: &KernelSpec,
    candidates: &[DerivFunctional],
    target: &Surrogate,
    cfg: &GreedyConfig,
) -> Result<(Surrogate, GreedyTrace)> {
    if candidates.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if target.kernel != *kernel {
        return Err(Error::InvalidArgument("synthetic target must use the training kernel".into()));
    }
    let dim = target.dim;
    let mut y = Vec::with_capacity(candidates.len());
    for f in candidates {
        y.push(target.grad_component(&f.center, f.coord)?);
    }
    run(kernel, dim, candidates, y, None, Some(target), cfg)
}

/// `y_{j,α} − ∂_α s(ξ_j)` as a points × coords matrix.
pub fn residual_vector(s: &Surrogate, data: &HbDataset) -> Result<DenseMatrix> {
    let d = data.dim();
    if data.is_empty() {
        return Ok(DenseMatrix::zeros(0, 0));
    }
    check_len(s.dim, d)?;
    let mut out = DenseMatrix::zeros(data.len(), d);
    let mut g = vec![0.0; d];
    for (j, (x, y)) in data.inputs.iter().zip(&data.targets).enumerate() {
        s.grad_into(x, &mut g);
        for a in 0..d {
            out[(j, a)] = y[a] - g[a];
        }
    }
    Ok(out)
}

/// `E_X = max |residual|` over a dataset.
pub fn max_residual(s: &Surrogate, data: &HbDataset) -> Result<f64> {
    Ok(residual_vector(s, data)?.max_abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Compares `√d · min_{m<i≤2m} a_i` against
/// `√d · m^{-1/2} ‖e_{m+1}‖ (Π_{i=m+1}^{2m} b_i)^{1/m}`.
pub fn verify_block_bound(trace: &GreedyTrace, m: usize) -> Result<BlockBound> {
    if m == 0 {
        return Err(Error::InvalidArgument("block bound needs m ≥ 1".into()));
    }
    let needed = 2 * m + 1;
    if trace.records.len() < needed {
        return Err(Error::InsufficientTrace { needed, available: trace.records.len() });
    }
    let block = &trace.records[m + 1..=2 * m];
    let e_next = trace.records[m + 1].rkhs_error.ok_or(Error::InsufficientTrace { needed, available: 0 })?;
    let mut log_b = 0.0;
    let mut min_a = f64::INFINITY;
    for r in block {
        let b = r.power_value.ok_or(Error::InsufficientTrace { needed, available: 0 })?;
        log_b += b.ln();
        min_a = min_a.min(r.max_residual);
    }
    let scale = (trace.dim as f64).sqrt();
    let lhs = scale * min_a;
    let rhs = scale * (m as f64).powf(-0.5) * e_next * (log_b / m as f64).exp();
    Ok(BlockBound { lhs, rhs, holds: lhs <= rhs + 1e-10 })
}
