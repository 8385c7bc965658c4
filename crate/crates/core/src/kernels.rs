//! Radial kernels `k(x, y) = κ(ε‖x − y‖)` and the derivatives that enter the
//! gradient Hermite–Birkhoff Gram matrix.
//!
//! Every family is evaluated through its even profile `h(s) = κ(ε√s)` with
//! `s = ‖x − y‖²`, so the derivatives carry no `1/r` factors except for the
//! Matérn-3/2 second derivative, which has a dedicated coincident-point
//! branch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::Dd;

/// Below this squared distance the Matérn-3/2 mixed derivative returns its
/// analytic limit.
const COINCIDENT_S: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    #[serde(rename = "imq")]
    Imq,
    #[serde(rename = "gaussian")]
    Gaussian,
    #[serde(rename = "matern32")]
    Matern32,
    #[serde(rename = "matern52")]
    Matern52,
}

impl KernelFamily {
    /// All families, in the order used for model-selection tie-breaks.
    pub const ALL: [KernelFamily; 4] = [KernelFamily::Imq, KernelFamily::Gaussian, KernelFamily::Matern32, KernelFamily::Matern52];

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Imq => "imq",
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Matern52 => "matern52",
        }
    }

    pub(crate) fn order(self) -> usize {
        Self::ALL.iter().position(|&f| f == self).unwrap_or(usize::MAX)
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "imq" => Ok(KernelFamily::Imq),
            "gaussian" | "gauss" => Ok(KernelFamily::Gaussian),
            "matern32" | "matern-3/2" => Ok(KernelFamily::Matern32),
            "matern52" | "matern-5/2" => Ok(KernelFamily::Matern52),
            other => Err(Error::InvalidArgument(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// A kernel family with its shape parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernelSpec")]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub epsilon: f64,
}

#[derive(Deserialize)]
struct RawKernelSpec {
    family: KernelFamily,
    epsilon: f64,
}

impl TryFrom<RawKernelSpec> for KernelSpec {
    type Error = Error;

    fn try_from(raw: RawKernelSpec) -> Result<Self> {
        KernelSpec::new(raw.family, raw.epsilon)
    }
}

/// `h`, `h′`, `h″` of the even profile at one squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialProfile {
    pub h: f64,
    pub dh: f64,
    /// `None` where the raw formula is singular (Matérn-3/2 at `s = 0`).
    pub d2h: Option<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("shape parameter must be positive, got {epsilon}")));
        }
        Ok(Self { family, epsilon })
    }

    pub fn gaussian(epsilon: f64) -> Self {
        Self::new(KernelFamily::Gaussian, epsilon).expect("positive epsilon")
    }

    /// Profile values at squared distance `s ≥ 0`.
    pub fn profile(&self, s: f64) -> RadialProfile {
        let e2 = self.epsilon * self.epsilon;
        match self.family {
            KernelFamily::Gaussian => {
                let h = (-e2 * s).exp();
                RadialProfile { h, dh: -e2 * h, d2h: Some(e2 * e2 * h) }
            }
            KernelFamily::Imq => {
                let base = 1.0 + e2 * s;
                let inv_sqrt = 1.0 / base.sqrt();
                RadialProfile { h: inv_sqrt, dh: -0.5 * e2 * inv_sqrt / base, d2h: Some(0.75 * e2 * e2 * inv_sqrt / (base * base)) }
            }
            KernelFamily::Matern32 => {
                let rho = self.epsilon * s.sqrt();
                let ex = (-rho).exp();
                RadialProfile { h: (1.0 + rho) * ex, dh: -0.5 * e2 * ex, d2h: (s > 0.0).then(|| e2 * self.epsilon * ex / (4.0 * s.sqrt())) }
            }
            KernelFamily::Matern52 => {
                let rho = self.epsilon * s.sqrt();
                let ex = (-rho).exp();
                RadialProfile { h: (1.0 + rho + rho * rho / 3.0) * ex, dh: -e2 * (1.0 + rho) * ex / 6.0, d2h: Some(e2 * e2 * ex / 12.0) }
            }
        }
    }

    /// `h′(0)`; the mixed derivative at coincident points is `−2 h′(0) δ_{αβ}`.
    pub fn dh_at_zero(&self) -> f64 {
        let e2 = self.epsilon * self.epsilon;
        match self.family {
            KernelFamily::Gaussian => -e2,
            KernelFamily::Imq => -0.5 * e2,
            KernelFamily::Matern32 => -0.5 * e2,
            KernelFamily::Matern52 => -e2 / 6.0,
        }
    }

    /// Diagonal Gram entry `∂^{(1)}_α ∂^{(2)}_α k(x, x)`.
    pub fn mixed_diagonal(&self) -> f64 {
        -2.0 * self.dh_at_zero()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_len(x.len(), y.len())?;
        Ok(self.profile(sq_dist(x, y)).h)
    }

    /// Gradient of `k(x, ·)` at `y`, i.e. `∂^{(2)}_β k(x, y)` for every `β`.
    pub fn grad2(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_len(x.len(), y.len())?;
        let dh = self.profile(sq_dist(x, y)).dh;
        Ok(x.iter().zip(y).map(|(a, b)| -2.0 * dh * (a - b)).collect())
    }

    /// One component `∂^{(2)}_β k(x, y)`; no bounds checks.
    #[inline]
    pub(crate) fn grad2_component(&self, x: &[f64], y: &[f64], beta: usize) -> f64 {
        let dh = self.profile(sq_dist(x, y)).dh;
        -2.0 * dh * (x[beta] - y[beta])
    }

    pub fn mixed2(&self, x: &[f64], y: &[f64], alpha: usize, beta: usize) -> Result<f64> {
        check_len(x.len(), y.len())?;
        for c in [alpha, beta] {
            if c >= x.len() {
                return Err(Error::InvalidCoordinate { coord: c, dim: x.len() });
            }
        }
        Ok(self.mixed2_unchecked(x, y, alpha, beta))
    }

    /// `∂^{(1)}_α ∂^{(2)}_β k(x, y) = −4 h″(s) d_α d_β − 2 h′(s) δ_{αβ}`.
    #[inline]
    pub(crate) fn mixed2_unchecked(&self, x: &[f64], y: &[f64], alpha: usize, beta: usize) -> f64 {
        let s = sq_dist(x, y);
        if self.family == KernelFamily::Matern32 && s < COINCIDENT_S {
            return if alpha == beta { self.mixed_diagonal() } else { 0.0 };
        }
        let p = self.profile(s);
        let d2h = p.d2h.unwrap_or(0.0);
        let da = x[alpha] - y[alpha];
        let db = x[beta] - y[beta];
        let mut v = -4.0 * d2h * da * db;
        if alpha == beta {
            v -= 2.0 * p.dh;
        }
        v
    }

    /// `(h′, h″)` in double-double at a squared distance given in
    /// double-double; `h″` is zero where singular (see [`RadialProfile`]).
    pub(crate) fn profile_derivs_dd(&self, s: Dd) -> (Dd, Dd) {
        let eps = Dd::new(self.epsilon);
        let e2 = Dd::prod(self.epsilon, self.epsilon);
        match self.family {
            KernelFamily::Gaussian => {
                let h = (-(e2 * s)).exp();
                (-(e2 * h), e2.square() * h)
            }
            KernelFamily::Imq => {
                let base = Dd::ONE + e2 * s;
                let inv_sqrt = base.sqrt().recip();
                let dh = (e2 * inv_sqrt / base).scale(-0.5);
                let d2h = (e2.square() * inv_sqrt / base.square()).scale(0.75);
                (dh, d2h)
            }
            KernelFamily::Matern32 => {
                let r = s.sqrt();
                let ex = (-(eps * r)).exp();
                let dh = (e2 * ex).scale(-0.5);
                let d2h = if s.hi > 0.0 { e2 * eps * ex / r.scale(4.0) } else { Dd::ZERO };
                (dh, d2h)
            }
            KernelFamily::Matern52 => {
                let rho = eps * s.sqrt();
                let ex = (-rho).exp();
                let dh = -(e2 * (Dd::ONE + rho) * ex) / Dd::new(6.0);
                let d2h = e2.square() * ex / Dd::new(12.0);
                (dh, d2h)
            }
        }
    }

    /// [`Self::mixed2_column`] accumulated as `out += c · column` in
    /// double-double.
    pub(crate) fn mixed2_column_acc_dd(&self, x: &[f64], y: &[f64], beta: usize, c: f64, out: &mut [Dd], d: &mut [Dd]) {
        let mut s = Dd::ZERO;
        for ((di, a), b) in d.iter_mut().zip(x).zip(y) {
            *di = Dd::diff(*a, *b);
            s = s + di.square();
        }
        if self.family == KernelFamily::Matern32 && s.hi < COINCIDENT_S {
            out[beta] = out[beta] + Dd::prod(self.epsilon, self.epsilon).scale(c);
            return;
        }
        let (dh, d2h) = self.profile_derivs_dd(s);
        let w = (d2h * d[beta]).scale(-4.0 * c);
        for (o, da) in out.iter_mut().zip(d.iter()) {
            *o = *o + w * *da;
        }
        out[beta] = out[beta] + dh.scale(-2.0 * c);
    }

    /// All mixed derivatives `∂^{(1)}_α ∂^{(2)}_β k(x, y)` for fixed `β`,
    /// written into `out` (length `d`). Shares one profile evaluation.
    #[inline]
    pub(crate) fn mixed2_column(&self, x: &[f64], y: &[f64], beta: usize, out: &mut [f64]) {
        let s = sq_dist(x, y);
        if self.family == KernelFamily::Matern32 && s < COINCIDENT_S {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[beta] = self.mixed_diagonal();
            return;
        }
        let p = self.profile(s);
        let d2h = p.d2h.unwrap_or(0.0);
        let db = x[beta] - y[beta];
        for (alpha, o) in out.iter_mut().enumerate() {
            *o = -4.0 * d2h * (x[alpha] - y[alpha]) * db;
        }
        out[beta] -= 2.0 * p.dh;
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(eps={})", self.family, self.epsilon)
    }
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}
