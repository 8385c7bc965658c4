//! Error measures along trajectories: relative state error against the
//! reference and energy drift `|H(x₀) − H(x(t))|`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::Trajectory;
use crate::predictor::relative_error;
use crate::systems::SystemSpec;

/// Labeled `(abscissa, value)` sequence with strictly increasing abscissae.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl MetricSeries {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Result<Self> {
        if let Some(w) = points.windows(2).find(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidArgument(format!("abscissae not increasing at {}", w[1].0)));
        }
        Ok(Self { label: label.into(), points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last_value(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    pub fn max_value(&self) -> f64 {
        self.points.iter().fold(0.0f64, |m, p| m.max(p.1))
    }

    /// Pointwise mean of series sharing the same abscissae.
    pub fn mean(label: impl Into<String>, series: &[MetricSeries]) -> Result<Self> {
        let first = series.first().ok_or(Error::EmptySeries)?;
        let mut pts = first.points.clone();
        for s in &series[1..] {
            if s.points.len() != pts.len() || s.points.iter().zip(&pts).any(|(a, b)| a.0 != b.0) {
                return Err(Error::GridMismatch(format!("series '{}' has different abscissae", s.label)));
            }
            for (acc, p) in pts.iter_mut().zip(&s.points) {
                acc.1 += p.1;
            }
        }
        let k = series.len() as f64;
        pts.iter_mut().for_each(|p| p.1 /= k);
        Self::new(label, pts)
    }
}

/// Errors of one test trajectory at the macro times.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMetrics {
    pub rel_kernel: MetricSeries,
    pub rel_baseline: MetricSeries,
    pub energy_kernel: MetricSeries,
    pub energy_baseline: MetricSeries,
    pub energy_reference: MetricSeries,
}

/// `e_rel` of predictor and baseline against the reference, and `e_H` of all
/// three against `H(x₀)`, at the predictor's macro times. The reference may
/// be sampled on a finer grid containing the macro grid.
pub fn compute_metrics(pred: &Trajectory, baseline: &Trajectory, reference: &Trajectory, sys: &SystemSpec) -> Result<TrajectoryMetrics> {
    if pred.is_empty() {
        return Err(Error::EmptySeries);
    }
    if pred.len() != baseline.len() || (pred.step - baseline.step).abs() > 1e-12 * pred.step {
        return Err(Error::GridMismatch(format!(
            "predictor has {} states at step {}, baseline {} at step {}",
            pred.len(),
            pred.step,
            baseline.len(),
            baseline.step
        )));
    }
    let ratio = pred.step / reference.step;
    let stride = ratio.round();
    if stride < 1.0 || (ratio - stride).abs() > 1e-9 * ratio {
        return Err(Error::GridMismatch(format!("reference step {} does not divide {}", reference.step, pred.step)));
    }
    let stride = stride as usize;
    if (pred.len() - 1) * stride + 1 > reference.len() {
        return Err(Error::GridMismatch(format!("reference has {} states, need {}", reference.len(), (pred.len() - 1) * stride + 1)));
    }
    let h0 = sys.energy(&reference.states[0])?;
    let mut rel_k = Vec::with_capacity(pred.len());
    let mut rel_b = Vec::with_capacity(pred.len());
    let mut e_k = Vec::with_capacity(pred.len());
    let mut e_b = Vec::with_capacity(pred.len());
    let mut e_r = Vec::with_capacity(pred.len());
    for k in 0..pred.len() {
        let t = pred.times[k];
        let r = &reference.states[k * stride];
        rel_k.push((t, relative_error(&pred.states[k], r)));
        rel_b.push((t, relative_error(&baseline.states[k], r)));
        e_k.push((t, (h0 - sys.energy(&pred.states[k])?).abs()));
        e_b.push((t, (h0 - sys.energy(&baseline.states[k])?).abs()));
        e_r.push((t, (h0 - sys.energy(r)?).abs()));
    }
    Ok(TrajectoryMetrics {
        rel_kernel: MetricSeries::new("kernel", rel_k)?,
        rel_baseline: MetricSeries::new("midpoint", rel_b)?,
        energy_kernel: MetricSeries::new("kernel", e_k)?,
        energy_baseline: MetricSeries::new("midpoint", e_b)?,
        energy_reference: MetricSeries::new("reference", e_r)?,
    })
}

impl TrajectoryMetrics {
    /// Pointwise mean over test trajectories.
    pub fn mean(all: &[TrajectoryMetrics]) -> Result<Self> {
        let pick = |f: fn(&TrajectoryMetrics) -> &MetricSeries| -> Result<MetricSeries> {
            let v: Vec<MetricSeries> = all.iter().map(|m| f(m).clone()).collect();
            let label = v.first().map(|s| s.label.clone()).unwrap_or_default();
            MetricSeries::mean(label, &v)
        };
        Ok(Self {
            rel_kernel: pick(|m| &m.rel_kernel)?,
            rel_baseline: pick(|m| &m.rel_baseline)?,
            energy_kernel: pick(|m| &m.energy_kernel)?,
            energy_baseline: pick(|m| &m.energy_baseline)?,
            energy_reference: pick(|m| &m.energy_reference)?,
        })
    }
}

/// Columns `delta_t,t,kernel,midpoint`.
pub fn write_rel_error_csv(runs: &[(f64, &TrajectoryMetrics)], mut w: impl Write) -> Result<()> {
    writeln!(w, "delta_t,t,kernel,midpoint")?;
    for (dt, m) in runs {
        for (a, b) in m.rel_kernel.points.iter().zip(&m.rel_baseline.points) {
            writeln!(w, "{dt},{},{:e},{:e}", a.0, a.1, b.1)?;
        }
    }
    Ok(())
}

/// Columns `delta_t,t,kernel,midpoint,reference`.
pub fn write_energy_error_csv(runs: &[(f64, &TrajectoryMetrics)], mut w: impl Write) -> Result<()> {
    writeln!(w, "delta_t,t,kernel,midpoint,reference")?;
    for (dt, m) in runs {
        let rows = m.energy_kernel.points.iter().zip(&m.energy_baseline.points).zip(&m.energy_reference.points);
        for ((a, b), c) in rows {
            writeln!(w, "{dt},{},{:e},{:e},{:e}", a.0, a.1, b.1, c.1)?;
        }
    }
    Ok(())
}
