//! Reference and baseline integrators: implicit midpoint (micro and macro)
//! and explicit symplectic Euler for separable Hamiltonians.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{apply_poisson, norm_inf, DenseMatrix, Lu};
use crate::systems::{PhaseState, SystemSpec};

pub const MIDPOINT_MAX_ITERATIONS: usize = 30;
pub const MIDPOINT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ImplicitMidpoint,
    SymplecticEuler,
}

/// States on the grid `t_k = k · step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub step: f64,
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    /// Nonlinear-solver iterations per step (`0` for the initial state);
    /// present for surrogate rollouts.
    pub solver_iterations: Option<Vec<usize>>,
}

impl Trajectory {
    pub fn new(step: f64, x0: PhaseState) -> Self {
        Self { step, times: vec![0.0], states: vec![x0], solver_iterations: None }
    }

    pub(crate) fn push(&mut self, x: PhaseState) {
        let k = self.states.len();
        self.times.push(k as f64 * self.step);
        self.states.push(x);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &PhaseState {
        self.states.last().expect("trajectory holds at least x0")
    }

    /// Every `stride`-th state, as a trajectory with step `stride · step`.
    pub fn subsample(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let states: Vec<PhaseState> = self.states.iter().step_by(stride).cloned().collect();
        let step = self.step * stride as f64;
        Self { step, times: (0..states.len()).map(|k| k as f64 * step).collect(), states, solver_iterations: None }
    }

    /// Columns `t, q_1..q_n, p_1..p_n` (plus `solver_iterations` when present).
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let n = self.states.first().map_or(0, PhaseState::dof);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("q_{i}")));
        header.extend((1..=n).map(|i| format!("p_{i}")));
        if self.solver_iterations.is_some() {
            header.push("solver_iterations".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row: Vec<String> = vec![t.to_string()];
            row.extend(x.q.iter().chain(&x.p).map(|v| v.to_string()));
            if let Some(it) = &self.solver_iterations {
                row.push(it[k].to_string());
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

fn check_step(dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {dt}")));
    }
    Ok(())
}

/// `K = ΔT / Δt`, required to be an integer up to roundoff.
pub fn step_count(macro_dt: f64, micro_dt: f64) -> Result<usize> {
    check_step(macro_dt)?;
    check_step(micro_dt)?;
    let k = (macro_dt / micro_dt).round();
    if k < 1.0 || (k * micro_dt - macro_dt).abs() > 1e-9 * macro_dt {
        return Err(Error::InvalidArgument(format!("macro step {macro_dt} is not an integer multiple of micro step {micro_dt}")));
    }
    Ok(k as usize)
}

fn midpoint_residual(sys: &SystemSpec, x: &[f64], xp: &[f64], dt: f64) -> Result<(Vec<f64>, PhaseState)> {
    let mid: Vec<f64> = x.iter().zip(xp).map(|(a, b)| 0.5 * (a + b)).collect();
    let mid = PhaseState::from_flat(&mid)?;
    let f = apply_poisson(&sys.grad(&mid)?);
    let r = xp.iter().zip(x).zip(&f).map(|((p, x), f)| p - x - dt * f).collect();
    Ok((r, mid))
}

/// `I − (Δt/2) J A` for the midpoint Newton matrix.
fn midpoint_matrix(hess: &DenseMatrix, dt: f64) -> Result<DenseMatrix> {
    let n2 = hess.rows();
    let jh = DenseMatrix::poisson(n2 / 2).matmul(hess)?;
    DenseMatrix::identity(n2).sub(&jh.scale(0.5 * dt))
}

/// One implicit midpoint step `x⁺ = x + Δt J ∇H((x + x⁺)/2)`.
///
/// Newton with the analytic Hessian; a step that increases the residual is
/// halved up to ten times.
pub fn implicit_midpoint_step(sys: &SystemSpec, x: &PhaseState, dt: f64) -> Result<(PhaseState, SolveReport)> {
    check_step(dt)?;
    check_len(sys.dof(), x.dof())?;
    if let Some(h) = sys.quadratic_matrix() {
        let stepper = LinearMidpoint::new(&h, dt)?;
        let xp = stepper.apply(x)?;
        let (r, _) = midpoint_residual(sys, &x.to_flat(), &xp.to_flat(), dt)?;
        return Ok((xp, SolveReport { iterations: 1, final_residual_norm: norm_inf(&r), converged: true }));
    }
    let x0 = x.to_flat();
    let tol = MIDPOINT_TOLERANCE * (1.0 + norm_inf(&x0));
    // explicit Euler predictor
    let f0 = apply_poisson(&sys.grad(x)?);
    let mut xp: Vec<f64> = x0.iter().zip(&f0).map(|(a, f)| a + dt * f).collect();
    let (mut r, mut mid) = midpoint_residual(sys, &x0, &xp, dt)?;
    let mut rn = norm_inf(&r);
    for it in 0..MIDPOINT_MAX_ITERATIONS {
        if rn <= tol {
            return Ok((PhaseState::from_flat(&xp)?, SolveReport { iterations: it, final_residual_norm: rn, converged: true }));
        }
        let jac = midpoint_matrix(&sys.hess(&mid)?, dt)?;
        let delta = Lu::factor(&jac)?.solve(&r)?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = xp.iter().zip(&delta).map(|(a, d)| a - lambda * d).collect();
            let (tr, tmid) = midpoint_residual(sys, &x0, &trial, dt)?;
            let tn = norm_inf(&tr);
            if tn < rn || lambda < 1e-3 {
                xp = trial;
                r = tr;
                mid = tmid;
                rn = tn;
                break;
            }
            lambda *= 0.5;
        }
    }
    if rn <= tol {
        return Ok((
            PhaseState::from_flat(&xp)?,
            SolveReport { iterations: MIDPOINT_MAX_ITERATIONS, final_residual_norm: rn, converged: true },
        ));
    }
    Err(Error::NoConvergence { iterations: MIDPOINT_MAX_ITERATIONS, residual: rn })
}

/// Precomputed midpoint map for quadratic Hamiltonians (a Cayley transform).
#[derive(Debug, Clone)]
pub struct LinearMidpoint {
    map: DenseMatrix,
}

impl LinearMidpoint {
    pub fn new(h: &DenseMatrix, dt: f64) -> Result<Self> {
        let n2 = h.rows();
        let jh = DenseMatrix::poisson(n2 / 2).matmul(h)?;
        let lhs = DenseMatrix::identity(n2).sub(&jh.scale(0.5 * dt))?;
        let rhs = DenseMatrix::identity(n2).add(&jh.scale(0.5 * dt))?;
        let map = Lu::factor(&lhs)?.solve_matrix(&rhs)?;
        Ok(Self { map })
    }

    pub fn apply(&self, x: &PhaseState) -> Result<PhaseState> {
        PhaseState::from_flat(&self.map.matvec(&x.to_flat())?)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.map
    }
}

/// `p⁺ = p − Δt ∇_q H(q, p)`, `q⁺ = q + Δt ∇_p H(q, p⁺)`.
pub fn symplectic_euler_step(sys: &SystemSpec, x: &PhaseState, dt: f64) -> Result<PhaseState> {
    check_len(sys.dof(), x.dof())?;
    if !sys.is_separable() {
        return Err(Error::InvalidArgument("symplectic Euler here needs a separable Hamiltonian".into()));
    }
    let n = x.dof();
    let g = sys.grad(x)?;
    let p: Vec<f64> = x.p.iter().zip(&g[..n]).map(|(p, g)| p - dt * g).collect();
    let half = PhaseState { q: x.q.clone(), p };
    let g = sys.grad(&half)?;
    let q = x.q.iter().zip(&g[n..]).map(|(q, g)| q + dt * g).collect();
    Ok(PhaseState { q, p: half.p })
}

/// Iterates the chosen stepper, recording every state.
pub fn propagate(sys: &SystemSpec, x0: &PhaseState, dt: f64, steps: usize, method: Method) -> Result<Trajectory> {
    check_step(dt)?;
    check_len(sys.dof(), x0.dof())?;
    let mut traj = Trajectory::new(dt, x0.clone());
    let linear = match (method, sys.quadratic_matrix()) {
        (Method::ImplicitMidpoint, Some(h)) => Some(LinearMidpoint::new(&h, dt)?),
        _ => None,
    };
    let mut x = x0.clone();
    for step in 0..steps {
        let next = match (&linear, method) {
            (Some(lin), _) => lin.apply(&x),
            (None, Method::ImplicitMidpoint) => implicit_midpoint_step(sys, &x, dt).map(|(x, _)| x),
            (None, Method::SymplecticEuler) => symplectic_euler_step(sys, &x, dt),
        };
        x = next.map_err(|e| Error::at_step(step, e))?;
        traj.push(x.clone());
    }
    Ok(traj)
}

/// End state only, without storing the intermediate trajectory.
pub fn propagate_final(sys: &SystemSpec, x0: &PhaseState, dt: f64, steps: usize, method: Method) -> Result<PhaseState> {
    check_step(dt)?;
    check_len(sys.dof(), x0.dof())?;
    let linear = match (method, sys.quadratic_matrix()) {
        (Method::ImplicitMidpoint, Some(h)) => Some(LinearMidpoint::new(&h, dt)?),
        _ => None,
    };
    let mut x = x0.clone();
    for step in 0..steps {
        let next = match (&linear, method) {
            (Some(lin), _) => lin.apply(&x),
            (None, Method::ImplicitMidpoint) => implicit_midpoint_step(sys, &x, dt).map(|(x, _)| x),
            (None, Method::SymplecticEuler) => symplectic_euler_step(sys, &x, dt),
        };
        x = next.map_err(|e| Error::at_step(step, e))?;
    }
    Ok(x)
}

/// Macro-step flow `Φ^{ΔT}(x₀)` from `K = ΔT/Δt` micro midpoint steps.
pub fn flow_map(sys: &SystemSpec, x0: &PhaseState, macro_dt: f64, micro_dt: f64) -> Result<PhaseState> {
    let k = step_count(macro_dt, micro_dt)?;
    propagate_final(sys, x0, micro_dt, k, Method::ImplicitMidpoint)
}

/// Reference trajectory on the macro grid, integrated with micro steps.
pub fn reference_trajectory(sys: &SystemSpec, x0: &PhaseState, macro_dt: f64, micro_dt: f64, macro_steps: usize) -> Result<Trajectory> {
    let k = step_count(macro_dt, micro_dt)?;
    let mut traj = Trajectory::new(macro_dt, x0.clone());
    let linear = match sys.quadratic_matrix() {
        Some(h) => Some(LinearMidpoint::new(&h, micro_dt)?),
        None => None,
    };
    let mut x = x0.clone();
    for step in 0..macro_steps {
        for _ in 0..k {
            x = match &linear {
                Some(lin) => lin.apply(&x),
                None => implicit_midpoint_step(sys, &x, micro_dt).map(|(x, _)| x),
            }
            .map_err(|e| Error::at_step(step, e))?;
        }
        traj.push(x.clone());
    }
    Ok(traj)
}

/// Central finite-difference Jacobian of a map on `R^{2n}`.
pub fn fd_jacobian(map: impl Fn(&PhaseState) -> Result<PhaseState>, x: &PhaseState, h: f64) -> Result<DenseMatrix> {
    let flat = x.to_flat();
    let d = flat.len();
    let mut jac = DenseMatrix::zeros(d, d);
    for j in 0..d {
        let mut xp = flat.clone();
        let mut xm = flat.clone();
        xp[j] += h;
        xm[j] -= h;
        let fp = map(&PhaseState::from_flat(&xp)?)?.to_flat();
        let fm = map(&PhaseState::from_flat(&xm)?)?.to_flat();
        // the representable step, so that an identity map differentiates exactly
        let width = xp[j] - xm[j];
        for i in 0..d {
            jac[(i, j)] = (fp[i] - fm[i]) / width;
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm2, symplecticity_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn st(q: &[f64], p: &[f64]) -> PhaseState {
        PhaseState::new(q.to_vec(), p.to_vec()).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> PhaseState {
        let q = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        let p = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        PhaseState::new(q, p).unwrap()
    }

    fn systems() -> Vec<SystemSpec> {
        vec![
            SystemSpec::pendulum(),
            SystemSpec::chain(3, 1.0, 0.25).unwrap(),
            SystemSpec::wave(5, 0.3, 1.0).unwrap(),
            SystemSpec::harmonic(2),
        ]
    }

    #[test]
    fn equilibrium_is_fixed() {
        let sys = SystemSpec::pendulum();
        let (x, rep) = implicit_midpoint_step(&sys, &st(&[0.0], &[0.0]), 0.1).unwrap();
        assert_eq!(x, st(&[0.0], &[0.0]));
        assert!(rep.converged);
        assert_eq!(symplectic_euler_step(&sys, &st(&[0.0], &[0.0]), 0.1).unwrap(), st(&[0.0], &[0.0]));
    }

    #[test]
    fn midpoint_conserves_oscillator_norm() {
        let sys = SystemSpec::harmonic(1);
        for dt in [1e-3, 0.1, 1.0, 7.0] {
            let x = st(&[0.3], &[-1.2]);
            let (xp, _) = implicit_midpoint_step(&sys, &x, dt).unwrap();
            assert!((norm2(&xp.to_flat()) - norm2(&x.to_flat())).abs() < 1e-12);
        }
    }

    #[test]
    fn midpoint_residual_meets_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for sys in systems() {
            for _ in 0..5 {
                let x = random_state(&mut rng, sys.dof(), 1.0);
                let (xp, rep) = implicit_midpoint_step(&sys, &x, 0.1).unwrap();
                let (r, _) = midpoint_residual(&sys, &x.to_flat(), &xp.to_flat(), 0.1).unwrap();
                assert!(norm_inf(&r) <= 1e-12 * (1.0 + norm_inf(&x.to_flat())) + 1e-15);
                assert!(rep.converged);
            }
        }
    }

    #[test]
    fn midpoint_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for sys in systems() {
            let x = random_state(&mut rng, sys.dof(), 1.0);
            let (xp, _) = implicit_midpoint_step(&sys, &x, 0.05).unwrap();
            // the adjoint step: solve x = x⁺ − Δt J∇H(mid) ⇔ x⁺ = x − (−Δt)…
            let back = reverse_midpoint(&sys, &xp, 0.05);
            for (a, b) in back.to_flat().iter().zip(x.to_flat()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    /// Midpoint with negative step, via the time-reversed system `(q, −p)`.
    fn reverse_midpoint(sys: &SystemSpec, x: &PhaseState, dt: f64) -> PhaseState {
        let flip = |s: &PhaseState| PhaseState { q: s.q.clone(), p: s.p.iter().map(|v| -v).collect() };
        // All test systems are even in p, so reversal in time is momentum flip.
        let (y, _) = implicit_midpoint_step(sys, &flip(x), dt).unwrap();
        flip(&y)
    }

    #[test]
    fn oscillator_symplectic_euler_by_hand() {
        let x = symplectic_euler_step(&SystemSpec::harmonic(1), &st(&[1.0], &[0.0]), 0.1).unwrap();
        assert_eq!(x.p, vec![-0.1]);
        assert!((x.q[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn steppers_are_symplectic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for sys in systems() {
            for _ in 0..10 {
                let x = random_state(&mut rng, sys.dof(), 1.0);
                let jm = fd_jacobian(|s| implicit_midpoint_step(&sys, s, 0.1).map(|r| r.0), &x, 1e-6).unwrap();
                assert!(symplecticity_error(&jm).unwrap() <= 1e-5, "{}", sys.name());
                let je = fd_jacobian(|s| symplectic_euler_step(&sys, s, 0.1), &x, 1e-6).unwrap();
                assert!(symplecticity_error(&je).unwrap() <= 1e-6, "{}", sys.name());
            }
        }
    }

    #[test]
    fn non_separable_rejected_by_euler() {
        let h = DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let sys = SystemSpec::quadratic(h).unwrap();
        assert!(symplectic_euler_step(&sys, &st(&[1.0], &[0.0]), 0.1).is_err());
        assert!(implicit_midpoint_step(&sys, &st(&[1.0], &[0.0]), 0.1).is_ok());
    }

    #[test]
    fn propagate_definition() {
        let sys = SystemSpec::pendulum();
        let x0 = st(&[1.0], &[0.0]);
        let t = propagate(&sys, &x0, 1e-3, 0, Method::ImplicitMidpoint).unwrap();
        assert_eq!(t.states, vec![x0.clone()]);
        let t = propagate(&sys, &x0, 1e-3, 100, Method::ImplicitMidpoint).unwrap();
        let mut x = x0.clone();
        for _ in 0..100 {
            x = implicit_midpoint_step(&sys, &x, 1e-3).unwrap().0;
        }
        assert_eq!(*t.last(), x);
        assert_eq!(flow_map(&sys, &x0, 0.1, 1e-3).unwrap(), x);
        assert!((t.times[100] - 0.1).abs() < 1e-12);
        let r = reference_trajectory(&sys, &x0, 0.05, 1e-3, 2).unwrap();
        assert_eq!(r.states[2], x);
    }

    #[test]
    fn step_count_requires_integer_ratio() {
        assert_eq!(step_count(0.1, 1e-3).unwrap(), 100);
        assert_eq!(step_count(0.025, 1e-3).unwrap(), 25);
        assert!(step_count(0.1, 0.03).is_err());
        assert!(step_count(0.0, 0.01).is_err());
    }

    /// The midpoint energy error is a bounded O(Δt²) oscillation: no secular
    /// growth, and halving the step divides it by four.
    #[test]
    fn pendulum_energy_error_is_bounded_and_second_order() {
        let sys = SystemSpec::pendulum();
        let x0 = st(&[1.0], &[0.0]);
        let h0 = sys.energy(&x0).unwrap();
        let max_err = |dt: f64, steps: usize| {
            propagate(&sys, &x0, dt, steps, Method::ImplicitMidpoint)
                .unwrap()
                .states
                .iter()
                .map(|x| (sys.energy(x).unwrap() - h0).abs())
                .fold(0.0, f64::max)
        };
        let e1 = max_err(1e-3, 6000);
        let e2 = max_err(5e-4, 12000);
        assert!(e1 < 1e-6, "{e1}");
        assert!((e1 / e2 - 4.0).abs() < 0.05, "{}", e1 / e2);
        // secular drift: the envelope over the first period equals the envelope over six
        let first = max_err(1e-3, 2100);
        assert!((e1 - first).abs() <= 1e-8, "{e1} vs {first}");
    }

    #[test]
    fn csv_header() {
        let t = Trajectory::new(0.1, st(&[1.0, 2.0], &[3.0, 4.0]));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,q_1,q_2,p_1,p_2\n0,1,2,3,4\n");
    }
}
