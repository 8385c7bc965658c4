//! Benchmark Hamiltonians in canonical coordinates `x = (q, p)`, with the
//! computable step-size bound for the mixed-variable chart and the
//! resonance check for quadratic Hamiltonians.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{expm, DenseMatrix, Lu};

/// Canonical phase-space state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        check_len(q.len(), p.len())?;
        if let Some(i) = q.iter().chain(&p).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { q, p })
    }

    /// Splits a flat `(q, p)` vector of even length.
    pub fn from_flat(x: &[f64]) -> Result<Self> {
        if !x.len().is_multiple_of(2) {
            return Err(Error::dim(x.len() + 1, x.len()));
        }
        let n = x.len() / 2;
        Self::new(x[..n].to_vec(), x[n..].to_vec())
    }

    pub fn zeros(n: usize) -> Self {
        Self { q: vec![0.0; n], p: vec![0.0; n] }
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * self.q.len());
        x.extend_from_slice(&self.q);
        x.extend_from_slice(&self.p);
        x
    }
}

/// The benchmark families.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemSpec {
    /// `H = p²/(2 m l²) + m g l (1 − cos q)`.
    Pendulum { mass: f64, length: f64, gravity: f64 },
    /// Unit masses between fixed walls with springs `f(δ) = α δ²/2 + β δ⁴/4`.
    Chain { n: usize, alpha: f64, beta: f64 },
    /// Semi-discrete wave equation on `(0, L)` with `N` interior nodes,
    /// homogeneous Dirichlet ends.
    Wave { nodes: usize, speed: f64, length: f64 },
    /// `H = ½ xᵀ H x`.
    Quadratic { h: DenseMatrix },
}

impl SystemSpec {
    pub fn pendulum() -> Self {
        SystemSpec::Pendulum { mass: 1.0, length: 1.0, gravity: 9.81 }
    }

    pub fn chain(n: usize, alpha: f64, beta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("chain needs at least one mass".into()));
        }
        Ok(SystemSpec::Chain { n, alpha, beta })
    }

    pub fn wave(nodes: usize, speed: f64, length: f64) -> Result<Self> {
        if nodes == 0 || !(length > 0.0) {
            return Err(Error::InvalidArgument("wave needs N ≥ 1 and L > 0".into()));
        }
        Ok(SystemSpec::Wave { nodes, speed, length })
    }

    pub fn quadratic(h: DenseMatrix) -> Result<Self> {
        if !h.is_square() || !h.rows().is_multiple_of(2) {
            return Err(Error::InvalidArgument("quadratic Hamiltonian needs an even square matrix".into()));
        }
        if !h.is_symmetric(1e-12) {
            return Err(Error::InvalidArgument("quadratic Hamiltonian matrix must be symmetric".into()));
        }
        Ok(SystemSpec::Quadratic { h })
    }

    /// `H = ½(q² + p²)` in `n` degrees of freedom.
    pub fn harmonic(n: usize) -> Self {
        SystemSpec::Quadratic { h: DenseMatrix::identity(2 * n) }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemSpec::Pendulum { .. } => "pendulum",
            SystemSpec::Chain { .. } => "chain",
            SystemSpec::Wave { .. } => "wave",
            SystemSpec::Quadratic { .. } => "quadratic",
        }
    }

    /// Degrees of freedom `n` (phase dimension is `2n`).
    pub fn dof(&self) -> usize {
        match self {
            SystemSpec::Pendulum { .. } => 1,
            SystemSpec::Chain { n, .. } => *n,
            SystemSpec::Wave { nodes, .. } => *nodes,
            SystemSpec::Quadratic { h } => h.rows() / 2,
        }
    }

    pub fn is_separable(&self) -> bool {
        match self {
            SystemSpec::Quadratic { h } => {
                let n = h.rows() / 2;
                (0..n).all(|i| (0..n).all(|j| h[(i, n + j)] == 0.0))
            }
            _ => true,
        }
    }

    /// Constant Hessian for the linear variants.
    pub fn quadratic_matrix(&self) -> Option<DenseMatrix> {
        match self {
            SystemSpec::Quadratic { h } => Some(h.clone()),
            SystemSpec::Wave { nodes, speed, .. } => {
                let n = *nodes;
                let d = self.wave_stiffness().expect("wave variant");
                let mut h = DenseMatrix::zeros(2 * n, 2 * n);
                h.set_block(0, 0, &d.scale(speed * speed));
                h.set_block(n, n, &DenseMatrix::identity(n));
                Some(h)
            }
            _ => None,
        }
    }

    /// Dirichlet central-difference matrix for `−∂_ξξ`, `(2, −1)/h²` with
    /// `h = L/(N+1)`.
    pub fn wave_stiffness(&self) -> Option<DenseMatrix> {
        let SystemSpec::Wave { nodes, length, .. } = self else {
            return None;
        };
        let n = *nodes;
        let h = length / (n as f64 + 1.0);
        let inv = 1.0 / (h * h);
        Some(DenseMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => 2.0 * inv,
            1 => -inv,
            _ => 0.0,
        }))
    }

    /// Grid nodes `ξ_i = i h`, `i = 1..N`, of the wave discretization.
    pub fn wave_grid(&self) -> Option<Vec<f64>> {
        let SystemSpec::Wave { nodes, length, .. } = self else {
            return None;
        };
        let h = length / (*nodes as f64 + 1.0);
        Some((1..=*nodes).map(|i| i as f64 * h).collect())
    }

    fn check(&self, x: &PhaseState) -> Result<()> {
        check_len(self.dof(), x.q.len())?;
        check_len(self.dof(), x.p.len())
    }

    pub fn energy(&self, x: &PhaseState) -> Result<f64> {
        self.check(x)?;
        Ok(match self {
            SystemSpec::Pendulum { mass, length, gravity } => {
                let (q, p) = (x.q[0], x.p[0]);
                p * p / (2.0 * mass * length * length) + mass * gravity * length * (1.0 - q.cos())
            }
            SystemSpec::Chain { alpha, beta, .. } => {
                let kinetic = 0.5 * x.p.iter().map(|v| v * v).sum::<f64>();
                let potential: f64 = elongations(&x.q).map(|d| 0.5 * alpha * d * d + 0.25 * beta * d.powi(4)).sum();
                kinetic + potential
            }
            SystemSpec::Wave { speed, .. } => {
                let dq = self.wave_apply(&x.q);
                let kinetic = 0.5 * x.p.iter().map(|v| v * v).sum::<f64>();
                kinetic + 0.5 * speed * speed * x.q.iter().zip(&dq).map(|(a, b)| a * b).sum::<f64>()
            }
            SystemSpec::Quadratic { h } => {
                let flat = x.to_flat();
                0.5 * flat.iter().zip(h.matvec(&flat)?).map(|(a, b)| a * b).sum::<f64>()
            }
        })
    }

    /// `∇H` as a flat `(∇_q H, ∇_p H)` vector.
    pub fn grad(&self, x: &PhaseState) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(match self {
            SystemSpec::Pendulum { mass, length, gravity } => {
                vec![mass * gravity * length * x.q[0].sin(), x.p[0] / (mass * length * length)]
            }
            SystemSpec::Chain { alpha, beta, .. } => {
                let sigma: Vec<f64> = elongations(&x.q).map(|d| alpha * d + beta * d * d * d).collect();
                let mut g = chain_bt_apply(&sigma);
                g.extend_from_slice(&x.p);
                g
            }
            SystemSpec::Wave { speed, .. } => {
                let c2 = speed * speed;
                let mut g: Vec<f64> = self.wave_apply(&x.q).into_iter().map(|v| c2 * v).collect();
                g.extend_from_slice(&x.p);
                g
            }
            SystemSpec::Quadratic { h } => h.matvec(&x.to_flat())?,
        })
    }

    pub fn hess(&self, x: &PhaseState) -> Result<DenseMatrix> {
        self.check(x)?;
        Ok(match self {
            SystemSpec::Pendulum { mass, length, gravity } => {
                DenseMatrix::from_diag(&[mass * gravity * length * x.q[0].cos(), 1.0 / (mass * length * length)])
            }
            SystemSpec::Chain { n, alpha, beta } => {
                let n = *n;
                let b = chain_b(n);
                let w: Vec<f64> = elongations(&x.q).map(|d| alpha + 3.0 * beta * d * d).collect();
                let kq = DenseMatrix::from_fn(n, n, |i, j| (0..=n).map(|k| b[(k, i)] * w[k] * b[(k, j)]).sum());
                let mut h = DenseMatrix::zeros(2 * n, 2 * n);
                h.set_block(0, 0, &kq);
                h.set_block(n, n, &DenseMatrix::identity(n));
                h
            }
            SystemSpec::Wave { .. } | SystemSpec::Quadratic { .. } => self.quadratic_matrix().expect("linear variant"),
        })
    }

    fn wave_apply(&self, q: &[f64]) -> Vec<f64> {
        let SystemSpec::Wave { nodes, length, .. } = self else {
            unreachable!("wave_apply on non-wave system");
        };
        let h = length / (*nodes as f64 + 1.0);
        let inv = 1.0 / (h * h);
        let n = q.len();
        (0..n)
            .map(|i| {
                let left = if i > 0 { q[i - 1] } else { 0.0 };
                let right = if i + 1 < n { q[i + 1] } else { 0.0 };
                (2.0 * q[i] - left - right) * inv
            })
            .collect()
    }

    /// `ΔT*_K = min{T, log 2 / L_K}` with `L_K` taken over the sample's
    /// bounding box (analytic supremum for pendulum and chain, sampled
    /// Hessian norms otherwise).
    pub fn step_size_bound(&self, sample: &[PhaseState], horizon: f64) -> Result<f64> {
        let first = sample.first().ok_or(Error::EmptySample)?;
        self.check(first)?;
        let n = self.dof();
        let mut lower = first.to_flat();
        let mut upper = lower.clone();
        for s in sample {
            self.check(s)?;
            for (i, v) in s.to_flat().into_iter().enumerate() {
                lower[i] = lower[i].min(v);
                upper[i] = upper[i].max(v);
            }
        }
        let lk = match self {
            SystemSpec::Pendulum { .. } | SystemSpec::Chain { .. } => self.hessian_bound_in_box(&lower[..n], &upper[..n])?,
            _ => {
                let mut lk: f64 = 0.0;
                for s in sample {
                    lk = lk.max(self.hess(s)?.spectral_norm()?);
                }
                lk
            }
        };
        Ok(step_bound_from_lipschitz(lk, horizon))
    }

    /// Analytic upper bound on `sup ‖∇²H‖₂` over a position box (momenta
    /// enter the Hessian only through constants here).
    pub fn hessian_bound_in_box(&self, q_lower: &[f64], q_upper: &[f64]) -> Result<f64> {
        check_len(self.dof(), q_lower.len())?;
        check_len(self.dof(), q_upper.len())?;
        match self {
            SystemSpec::Pendulum { mass, length, gravity } => Ok((mass * gravity * length).abs().max(1.0 / (mass * length * length))),
            SystemSpec::Chain { n, alpha, beta } => {
                let n = *n;
                let mut delta_k: f64 = 0.0;
                for i in 0..=n {
                    let d = if i == 0 {
                        q_lower[0].abs().max(q_upper[0].abs())
                    } else if i == n {
                        q_lower[n - 1].abs().max(q_upper[n - 1].abs())
                    } else {
                        (q_upper[i] - q_lower[i - 1]).abs().max((q_upper[i - 1] - q_lower[i]).abs())
                    };
                    delta_k = delta_k.max(d);
                }
                // Gershgorin: σ(BᵀB) ⊂ [0, 4]
                Ok(1f64.max(4.0 * (alpha + 3.0 * beta * delta_k * delta_k)))
            }
            _ => {
                let h = self.quadratic_matrix().ok_or(Error::NotQuadratic)?;
                h.spectral_norm()
            }
        }
    }

    /// `det D(ΔT)` where `D` is the lower-right block of `exp(ΔT J H)`.
    pub fn resonance_check(&self, delta_t: f64) -> Result<ResonanceReport> {
        let h = self.quadratic_matrix().ok_or(Error::NotQuadratic)?;
        let n = self.dof();
        let jh = DenseMatrix::poisson(n).matmul(&h)?;
        let m = expm(&jh.scale(delta_t))?;
        let d = m.block(n, n, n, n);
        let det = Lu::factor(&d)?.det();
        Ok(ResonanceReport { delta_t, det_d: det, resonant: det.abs() < 1e-10 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResonanceReport {
    pub delta_t: f64,
    pub det_d: f64,
    pub resonant: bool,
}

pub fn step_bound_from_lipschitz(lk: f64, horizon: f64) -> f64 {
    if lk == 0.0 {
        horizon
    } else {
        horizon.min(std::f64::consts::LN_2 / lk)
    }
}

/// Spring elongations `δ = B q` with virtual fixed nodes `q₀ = q_{n+1} = 0`.
fn elongations(q: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let n = q.len();
    (0..=n).map(move |i| {
        let next = if i < n { q[i] } else { 0.0 };
        let prev = if i > 0 { q[i - 1] } else { 0.0 };
        next - prev
    })
}

/// `Bᵀ σ` for the `(n+1) × n` elongation matrix.
fn chain_bt_apply(sigma: &[f64]) -> Vec<f64> {
    let n = sigma.len() - 1;
    (0..n).map(|i| sigma[i] - sigma[i + 1]).collect()
}

/// The `(n+1) × n` elongation matrix: ones on the diagonal, minus ones below.
pub fn chain_b(n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n + 1, n, |i, j| {
        if i == j {
            1.0
        } else if i == j + 1 {
            -1.0
        } else {
            0.0
        }
    })
}
