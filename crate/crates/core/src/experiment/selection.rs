//! Model selection over kernel families and shape parameters by the
//! validation residual after `m*` greedy steps. The table also reports each
//! candidate's gradient roundoff level, which grows with the size of its
//! cancelling coefficients.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greedy::{train_f_greedy_with_validation, GreedyConfig};
use crate::hb::{HbDataset, Surrogate};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::predictor::gradient_noise_floor;

use super::config::SelectionConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub family: KernelFamily,
    pub epsilon: f64,
    pub centers: usize,
    pub train_error: f64,
    pub validation_error: f64,
    pub noise_floor: f64,
    /// Set when training this candidate failed or it is ill-conditioned.
    pub failure: Option<String>,
    pub selected: bool,
}

/// Candidates in tie-break order: family order, then ascending `ε`.
/// Duplicates are kept so the table mirrors the configured grid.
pub fn candidates(cfg: &SelectionConfig) -> Result<Vec<KernelSpec>> {
    let mut families = cfg.families.clone();
    families.sort_by_key(|f| f.order());
    let mut eps = cfg.epsilons.clone();
    eps.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(families.len() * eps.len());
    for f in families {
        for &e in &eps {
            out.push(KernelSpec::new(f, e)?);
        }
    }
    Ok(out)
}

type Evaluation = Result<(Surrogate, f64, f64)>;

fn evaluate(kernel: &KernelSpec, train: &HbDataset, val: &HbDataset, m_star: usize) -> Evaluation {
    let cfg = GreedyConfig { max_centers: m_star, residual_tolerance: 0.0, record_power_values: false };
    let (s, trace) = train_f_greedy_with_validation(kernel, train, val, &cfg)?;
    let v = trace.final_validation_error.unwrap_or(f64::NAN);
    if !v.is_finite() || !trace.final_max_residual.is_finite() {
        return Err(Error::InvalidArgument("non-finite residual".into()));
    }
    Ok((s, trace.final_max_residual, v))
}

#[cfg(feature = "parallel")]
fn evaluate_all(kernels: &[KernelSpec], train: &HbDataset, val: &HbDataset, m_star: usize) -> Vec<Evaluation> {
    use rayon::prelude::*;
    kernels.par_iter().map(|k| evaluate(k, train, val, m_star)).collect()
}

#[cfg(not(feature = "parallel"))]
fn evaluate_all(kernels: &[KernelSpec], train: &HbDataset, val: &HbDataset, m_star: usize) -> Vec<Evaluation> {
    kernels.iter().map(|k| evaluate(k, train, val, m_star)).collect()
}

/// Trains every candidate to `m*` centers and picks the smallest validation
/// residual, the earliest candidate winning ties. Returns the winner, its
/// `m*` surrogate and the full table.
pub fn select_model(
    cfg: &SelectionConfig,
    m_star: usize,
    train: &HbDataset,
    val: &HbDataset,
) -> Result<(KernelSpec, Surrogate, Vec<SelectionRow>)> {
    let kernels = candidates(cfg)?;
    if kernels.is_empty() {
        return Err(Error::InvalidArgument("empty model-selection grid".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let results = evaluate_all(&kernels, train, val, m_star);
    let mut rows = Vec::with_capacity(kernels.len());
    let mut best: Option<(usize, f64, Surrogate)> = None;
    for (i, (k, r)) in kernels.iter().zip(results).enumerate() {
        let row = match r {
            Ok((s, tr, v)) => {
                let centers = s.len();
                let floor = gradient_noise_floor(&s, train.delta_t);
                if best.as_ref().is_none_or(|(_, b, _)| v < *b) {
                    best = Some((i, v, s));
                }
                SelectionRow {
                    family: k.family,
                    epsilon: k.epsilon,
                    centers,
                    train_error: tr,
                    validation_error: v,
                    noise_floor: floor,
                    failure: None,
                    selected: false,
                }
            }
            Err(e) => SelectionRow {
                family: k.family,
                epsilon: k.epsilon,
                centers: 0,
                train_error: f64::NAN,
                validation_error: f64::NAN,
                noise_floor: f64::NAN,
                failure: Some(e.to_string()),
                selected: false,
            },
        };
        rows.push(row);
    }
    let (i, _, s) = best.ok_or(Error::AllCandidatesFailed)?;
    rows[i].selected = true;
    Ok((kernels[i], s, rows))
}

/// Columns `delta_t,family,epsilon,centers,train_error,validation_error,noise_floor,selected`.
pub fn write_selection_csv(tables: &[(f64, Vec<SelectionRow>)], mut w: impl Write) -> Result<()> {
    writeln!(w, "delta_t,family,epsilon,centers,train_error,validation_error,noise_floor,selected")?;
    for (dt, rows) in tables {
        for r in rows {
            writeln!(
                w,
                "{dt},{},{},{},{:e},{:e},{:e},{}",
                r.family,
                r.epsilon,
                r.centers,
                r.train_error,
                r.validation_error,
                r.noise_floor,
                u8::from(r.selected)
            )?;
        }
    }
    Ok(())
}
