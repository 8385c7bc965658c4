//! The implicit symplectic kernel predictor
//! `x_pred = x₀ + ΔT J ∇s(q₀, p_pred)`.
//!
//! Only the momentum block is implicit: `P = p₀ − ΔT ∇_q s(q₀, P)`, after
//! which `Q = q₀ + ΔT ∇_p s(q₀, P)` is explicit. Because the update is the
//! mixed-variable generating-function form of `s`, the resulting map is
//! symplectic for any `s`, however well or badly fitted.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::hb::Surrogate;
use crate::integrators::{fd_jacobian, SolveReport, Trajectory};
use crate::linalg::{norm_inf, symplecticity_error, DenseMatrix, Lu};
use crate::systems::PhaseState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    /// Fixed-point iteration, switching to Newton when it stalls.
    FixedPoint,
    /// Newton with a finite-difference Jacobian from the start.
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Acceptance threshold, relative to `1 + ‖p₀‖∞`.
    pub tolerance: f64,
    /// Iteration continues toward this tighter level while it still makes
    /// progress, which keeps finite-difference diagnostics clean.
    pub target_tolerance: f64,
    pub max_iterations: usize,
    pub mode: SolverMode,
    /// Relaxation weight of the fixed-point update.
    pub damping: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tolerance: 1e-11, target_tolerance: 1e-14, max_iterations: 200, mode: SolverMode::FixedPoint, damping: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub surrogate: Surrogate,
    pub delta_t: f64,
    pub settings: SolverSettings,
}

impl PredictorModel {
    pub fn new(surrogate: Surrogate, delta_t: f64) -> Result<Self> {
        if !surrogate.dim.is_multiple_of(2) || surrogate.dim == 0 {
            return Err(Error::InvalidArgument(format!("surrogate dimension {} is not even", surrogate.dim)));
        }
        if !(delta_t > 0.0) {
            return Err(Error::InvalidArgument(format!("ΔT must be positive, got {delta_t}")));
        }
        Ok(Self { surrogate, delta_t, settings: SolverSettings::default() })
    }

    pub fn dof(&self) -> usize {
        self.surrogate.dim / 2
    }

    /// Roundoff level of `ΔT ∇s` beyond the final rounding:
    /// `ΔT · u² · Σ|c_j| · k_αα(0)`, since the gradient is accumulated in
    /// double-double and every summand is bounded by `|c_j| k_αα(0)`.
    /// Strongly cancelling coefficient vectors can still push it above the
    /// nominal tolerance.
    pub fn noise_floor(&self) -> f64 {
        gradient_noise_floor(&self.surrogate, self.delta_t)
    }

    /// `R(P) = P − p₀ + ΔT ∇_q s(q₀, P)` in the ∞-norm, with the gradient.
    fn residual(&self, xi: &mut [f64], p0: &[f64], p: &[f64], grad: &mut [f64], r: &mut [f64]) -> f64 {
        let n = p0.len();
        xi[n..].copy_from_slice(p);
        self.surrogate.grad_precise_into(xi, grad);
        for i in 0..n {
            r[i] = p[i] - p0[i] + self.delta_t * grad[i];
        }
        norm_inf(r)
    }

    fn solve_from(&self, q0: &[f64], p0: &[f64], guess: Vec<f64>) -> (Vec<f64>, SolveReport) {
        let n = q0.len();
        let s = &self.settings;
        let accept = (s.tolerance * (1.0 + norm_inf(p0))).max(self.noise_floor());
        let target = s.target_tolerance * (1.0 + norm_inf(p0));
        let mut xi = [q0, p0].concat();
        let mut grad = vec![0.0; 2 * n];
        let mut r = vec![0.0; n];
        let mut p = guess;
        let mut rn = self.residual(&mut xi, p0, &p, &mut grad, &mut r);
        let mut newton = s.mode == SolverMode::Newton;
        let mut stalls = 0;
        let mut it = 0;
        while it < s.max_iterations && rn > target {
            it += 1;
            let trial: Vec<f64> = if newton {
                match self.newton_step(&mut xi, p0, &p, &r) {
                    Some(t) => t,
                    None => break,
                }
            } else {
                p.iter().zip(&r).map(|(p, r)| p - s.damping * r).collect()
            };
            let mut tr = vec![0.0; n];
            let tn = self.residual(&mut xi, p0, &trial, &mut grad, &mut tr);
            if !tn.is_finite() {
                break;
            }
            let stalled = tn > 0.9 * rn;
            if tn <= rn {
                p = trial;
                r = tr;
                rn = tn;
            }
            if stalled {
                if rn <= accept {
                    stalls += 1;
                    if stalls >= 3 {
                        break;
                    }
                } else if !newton {
                    newton = true;
                } else {
                    stalls += 1;
                    if stalls >= 10 {
                        break;
                    }
                }
            }
        }
        let converged = rn <= accept;
        (p, SolveReport { iterations: it, final_residual_norm: rn, converged })
    }

    /// Newton update with a central-difference Jacobian of `R`.
    fn newton_step(&self, xi: &mut [f64], p0: &[f64], p: &[f64], r: &[f64]) -> Option<Vec<f64>> {
        let n = p0.len();
        let mut jac = DenseMatrix::zeros(n, n);
        let mut grad = vec![0.0; 2 * n];
        let mut rp = vec![0.0; n];
        let mut rm = vec![0.0; n];
        for j in 0..n {
            let h = 1e-7 * (1.0 + p[j].abs());
            let mut pp = p.to_vec();
            pp[j] += h;
            self.residual(xi, p0, &pp, &mut grad, &mut rp);
            pp[j] = p[j] - h;
            self.residual(xi, p0, &pp, &mut grad, &mut rm);
            for i in 0..n {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let delta = Lu::factor(&jac).ok()?.solve(r).ok()?;
        Some(p.iter().zip(&delta).map(|(p, d)| p - d).collect())
    }

    /// One macro step `x₀ ↦ (Q, P)`.
    pub fn predict_step(&self, x0: &PhaseState) -> Result<(PhaseState, SolveReport)> {
        let n = self.dof();
        check_len(n, x0.q.len())?;
        check_len(n, x0.p.len())?;
        let (q0, p0) = (&x0.q, &x0.p);
        let (mut p, mut report) = self.solve_from(q0, p0, p0.clone());
        if !report.converged {
            let xi = [q0.as_slice(), p0.as_slice()].concat();
            let g = self.surrogate.grad_precise(&xi)?;
            let guess: Vec<f64> = p0.iter().zip(&g[..n]).map(|(p, g)| p - self.delta_t * g).collect();
            let (p2, r2) = self.solve_from(q0, p0, guess);
            let iterations = report.iterations + r2.iterations;
            p = p2;
            report = SolveReport { iterations, ..r2 };
        }
        if !report.converged {
            return Err(Error::NoConvergence { iterations: report.iterations, residual: report.final_residual_norm });
        }
        let xi = [q0.as_slice(), p.as_slice()].concat();
        let g = self.surrogate.grad_precise(&xi)?;
        let q: Vec<f64> = q0.iter().zip(&g[n..]).map(|(q, g)| q + self.delta_t * g).collect();
        Ok((PhaseState { q, p }, report))
    }

    /// Composes `num_macro_steps` predictions; iteration counts are kept.
    pub fn rollout(&self, x0: &PhaseState, num_macro_steps: usize) -> Result<Trajectory> {
        check_len(self.dof(), x0.dof())?;
        let mut traj = Trajectory::new(self.delta_t, x0.clone());
        let mut iterations = vec![0];
        let mut x = x0.clone();
        for step in 0..num_macro_steps {
            let (next, rep) = self.predict_step(&x).map_err(|e| Error::at_step(step, e))?;
            iterations.push(rep.iterations);
            x = next;
            traj.push(x.clone());
        }
        traj.solver_iterations = Some(iterations);
        Ok(traj)
    }

    /// `‖DΨᵀ J DΨ − J‖∞` with a central-difference Jacobian (step `1e-6`).
    pub fn symplecticity_defect(&self, x0: &PhaseState) -> Result<f64> {
        let jac = fd_jacobian(|x| self.predict_step(x).map(|r| r.0), x0, 1e-6)?;
        symplecticity_error(&jac)
    }

    /// `ΔT · L_S` with `L_S` the largest spectral norm, over the sample, of
    /// the finite-difference Jacobian of `P ↦ ∇_q s(q₀, P)`.
    pub fn contraction_margin(&self, region_sample: &[PhaseState]) -> Result<f64> {
        if region_sample.is_empty() {
            return Err(Error::EmptySample);
        }
        let n = self.dof();
        let mut ls: f64 = 0.0;
        for x in region_sample {
            check_len(n, x.dof())?;
            let mut jac = DenseMatrix::zeros(n, n);
            for j in 0..n {
                let h = 1e-6;
                let mut xi = x.to_flat();
                xi[n + j] += h;
                let gp = self.surrogate.grad_precise(&xi)?;
                xi[n + j] -= 2.0 * h;
                let gm = self.surrogate.grad_precise(&xi)?;
                for i in 0..n {
                    jac[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
                }
            }
            ls = ls.max(jac.spectral_norm()?);
        }
        Ok(self.delta_t * ls)
    }
}

/// `ΔT · u² · Σ|c_j| · k_αα(0)`; see [`PredictorModel::noise_floor`].
pub fn gradient_noise_floor(s: &Surrogate, delta_t: f64) -> f64 {
    let csum: f64 = s.coeffs.iter().map(|c| c.abs()).sum();
    delta_t * f64::EPSILON * f64::EPSILON * csum * s.kernel.mixed_diagonal()
}

/// `‖x − x_ref‖₂ / ‖x_ref‖₂`; absolute error when the reference is zero.
pub fn relative_error(x: &PhaseState, reference: &PhaseState) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in x.to_flat().iter().zip(reference.to_flat()) {
        num += (a - b) * (a - b);
        den += b * b;
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greedy::{train_f_greedy, GreedyConfig};
    use crate::hb::{DerivFunctional, HbDataset};
    use crate::integrators::flow_map;
    use crate::kernels::{KernelFamily, KernelSpec};
    use crate::linalg::apply_poisson_t;
    use crate::systems::SystemSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn st(q: &[f64], p: &[f64]) -> PhaseState {
        PhaseState::new(q.to_vec(), p.to_vec()).unwrap()
    }

    /// HB data for a system from random initial states in `[-r, r]^{2n}`.
    fn hb_data(sys: &SystemSpec, count: usize, r: f64, dt: f64, seed: u64) -> HbDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = sys.dof();
        let (mut inputs, mut targets) = (Vec::new(), Vec::new());
        for _ in 0..count {
            let x0 =
                PhaseState::new((0..n).map(|_| rng.gen_range(-r..r)).collect(), (0..n).map(|_| rng.gen_range(-r..r)).collect()).unwrap();
            let x1 = flow_map(sys, &x0, dt, dt / 100.0).unwrap();
            inputs.push([x0.q.clone(), x1.p.clone()].concat());
            let diff: Vec<f64> = x1.to_flat().iter().zip(x0.to_flat()).map(|(a, b)| (a - b) / dt).collect();
            targets.push(apply_poisson_t(&diff));
        }
        HbDataset::new(inputs, targets, dt, sys.name(), "test").unwrap()
    }

    fn random_surrogate(seed: u64, n: usize, count: usize, scale: f64) -> Surrogate {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = KernelSpec::new(KernelFamily::Gaussian, 1.0).unwrap();
        let f = (0..count)
            .map(|_| DerivFunctional::new((0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect(), rng.gen_range(0..2 * n)).unwrap())
            .collect();
        let c = (0..count).map(|_| rng.gen_range(-scale..scale)).collect();
        Surrogate::from_parts(k, 2 * n, f, c).unwrap()
    }

    #[test]
    fn empty_surrogate_is_identity() {
        let m = PredictorModel::new(Surrogate::empty(KernelSpec::gaussian(1.0), 2), 0.1).unwrap();
        let x = st(&[0.4], &[-0.3]);
        assert_eq!(m.predict_step(&x).unwrap().0, x);
        let t = m.rollout(&x, 5).unwrap();
        assert!(t.states.iter().all(|s| *s == x));
        assert_eq!(m.rollout(&x, 0).unwrap().states.len(), 1);
        assert!(m.symplecticity_defect(&x).unwrap() <= 1e-12);
        assert_eq!(m.contraction_margin(&[x]).unwrap(), 0.0);
        assert!(matches!(m.contraction_margin(&[]), Err(Error::EmptySample)));
    }

    #[test]
    fn dimension_checks() {
        assert!(PredictorModel::new(Surrogate::empty(KernelSpec::gaussian(1.0), 3), 0.1).is_err());
        let m = PredictorModel::new(Surrogate::empty(KernelSpec::gaussian(1.0), 2), 0.1).unwrap();
        assert!(matches!(m.predict_step(&st(&[1.0, 2.0], &[0.0, 0.0])), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn residual_and_consistency_identity() {
        let s = random_surrogate(1, 2, 12, 0.5);
        let m = PredictorModel::new(s.clone(), 0.1).unwrap();
        let x0 = st(&[0.1, -0.2], &[0.3, 0.05]);
        let (x1, rep) = m.predict_step(&x0).unwrap();
        assert!(rep.converged && rep.final_residual_norm <= 1e-11 * 1.3);
        // Jᵀ(x1 − x0)/ΔT = ∇s(q0, P)
        let diff: Vec<f64> = x1.to_flat().iter().zip(x0.to_flat()).map(|(a, b)| (a - b) / 0.1).collect();
        let lhs = apply_poisson_t(&diff);
        let g = s.grad(&[x0.q.clone(), x1.p.clone()].concat()).unwrap();
        for (a, b) in lhs.iter().zip(&g) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn poorly_fitted_surrogates_remain_symplectic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..5 {
            let m = PredictorModel::new(random_surrogate(seed, 2, 15, 1.0), 0.1).unwrap();
            for _ in 0..2 {
                let x = st(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], &[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
                let d = m.symplecticity_defect(&x).unwrap();
                assert!(d <= 1e-5, "seed {seed}: {d}");
            }
        }
    }

    #[test]
    fn newton_mode_agrees_with_fixed_point() {
        let mut m = PredictorModel::new(random_surrogate(9, 1, 8, 1.0), 0.2).unwrap();
        let x = st(&[0.2], &[0.1]);
        let (a, _) = m.predict_step(&x).unwrap();
        m.settings.mode = SolverMode::Newton;
        let (b, _) = m.predict_step(&x).unwrap();
        assert!(relative_error(&a, &b) < 1e-12);
    }

    #[test]
    fn one_term_quadratic_margin() {
        // s = c ∂^{(2)}_q k(x, 0) = 2c q e^{−q²−p²}, so at q = 0
        // ∂_p ∂_q s = −4c p e^{−p²}.
        let k = KernelSpec::gaussian(1.0);
        let c = 0.5;
        let s = Surrogate::from_parts(k, 2, vec![DerivFunctional::new(vec![0.0, 0.0], 0).unwrap()], vec![c]).unwrap();
        let m = PredictorModel::new(s, 0.1).unwrap();
        let p = 0.7f64;
        let expected = 0.1 * (4.0 * c * p * (-p * p).exp()).abs();
        let got = m.contraction_margin(&[st(&[0.0], &[p])]).unwrap();
        assert!((got - expected).abs() < 1e-8, "{got} vs {expected}");
    }

    #[test]
    fn oscillator_model_reproduces_flow() {
        let sys = SystemSpec::harmonic(1);
        let data = hb_data(&sys, 60, 1.0, 0.1, 2);
        let k = KernelSpec::new(KernelFamily::Gaussian, 0.5).unwrap();
        let (s, trace) = train_f_greedy(&k, &data, &GreedyConfig::new(110, 1e-9).unwrap()).unwrap();
        let train_res = trace.final_max_residual;
        assert!(train_res < 1e-5, "{train_res}");
        let m = PredictorModel::new(s, 0.1).unwrap();
        // training points: x₀ = (ξ_q, ξ_p + ΔT y_q), x_ΔT = (ξ_q + ΔT y_p, ξ_p)
        for (xi, y) in data.inputs.iter().zip(&data.targets).take(10) {
            let x0 = st(&xi[..1], &[xi[1] + 0.1 * y[0]]);
            let x1 = st(&[xi[0] + 0.1 * y[1]], &xi[1..]);
            let pred = m.predict_step(&x0).unwrap().0;
            let err = pred.to_flat().iter().zip(x1.to_flat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 10.0 * 0.1 * train_res + 1e-9, "{err} vs {train_res}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let x0 = st(&[rng.gen_range(-0.7..0.7)], &[rng.gen_range(-0.7..0.7)]);
            let pred = m.predict_step(&x0).unwrap().0;
            let exact = flow_map(&sys, &x0, 0.1, 1e-3).unwrap();
            let err = pred.to_flat().iter().zip(exact.to_flat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-4, "{err}");
        }
    }
}
