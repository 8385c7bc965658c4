use proptest::prelude::*;

use symker::dataset::{sample_states, Interval, SamplerMode, SamplerSpec, Side};
use symker::hb::{fit, gram_matrix, DerivFunctional, Surrogate};
use symker::integrators::{propagate, Method};
use symker::kernels::{KernelFamily, KernelSpec};
use symker::linalg::{expm, sym_eigen, symplecticity_error, DenseMatrix, Lu};
use symker::mor::{csvd_basis, snapshot_matrices};
use symker::predictor::PredictorModel;
use symker::systems::{PhaseState, SystemSpec};

fn family() -> impl Strategy<Value = KernelFamily> {
    prop::sample::select(KernelFamily::ALL.to_vec())
}

fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, d)
}

fn square(n: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| DenseMatrix::from_row_major(n, n, v).unwrap())
}

fn max_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.sub(b).unwrap().max_abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_symmetric_with_antisymmetric_gradient(
        fam in family(), eps in 0.2f64..3.0, (x, y) in (1usize..5).prop_flat_map(|d| (point(d), point(d)))
    ) {
        let k = KernelSpec::new(fam, eps).unwrap();
        prop_assert_eq!(k.eval(&x, &y).unwrap(), k.eval(&y, &x).unwrap());
        let gxy = k.grad2(&x, &y).unwrap();
        let gyx = k.grad2(&y, &x).unwrap();
        for (a, b) in gxy.iter().zip(&gyx) {
            prop_assert!((a + b).abs() <= 1e-14 * (1.0 + a.abs()));
        }
        for a in 0..x.len() {
            for b in 0..x.len() {
                let m = k.mixed2(&x, &y, a, b).unwrap();
                let mt = k.mixed2(&y, &x, b, a).unwrap();
                prop_assert!((m - mt).abs() <= 1e-13 * (1.0 + m.abs()));
            }
        }
    }

    #[test]
    fn kernel_gradient_matches_central_differences(
        fam in family(), eps in 0.3f64..2.0, (x, y) in (1usize..4).prop_flat_map(|d| (point(d), point(d)))
    ) {
        let k = KernelSpec::new(fam, eps).unwrap();
        let g = k.grad2(&x, &y).unwrap();
        let h = 1e-6;
        for b in 0..y.len() {
            let (mut yp, mut ym) = (y.clone(), y.clone());
            yp[b] += h;
            ym[b] -= h;
            let fd = (k.eval(&x, &yp).unwrap() - k.eval(&x, &ym).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[b]).abs() <= 1e-6 * (1.0 + g[b].abs()), "{} vs {}", fd, g[b]);
        }
    }

    #[test]
    fn derivative_gram_is_symmetric_positive_semidefinite(
        fam in family(), eps in 0.5f64..2.0, centers in prop::collection::vec((point(2), 0usize..2), 2..12)
    ) {
        let k = KernelSpec::new(fam, eps).unwrap();
        let mut f: Vec<DerivFunctional> = Vec::new();
        for (c, a) in centers {
            if !f.iter().any(|g| g.coord == a && g.center == c) {
                f.push(DerivFunctional::new(c, a).unwrap());
            }
        }
        let g = gram_matrix(&k, &f).unwrap();
        prop_assert!(g.is_symmetric(0.0));
        let e = sym_eigen(&g).unwrap();
        let scale = e.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(e.values.iter().all(|v| *v >= -1e-10 * scale));
    }

    #[test]
    fn lu_solves_and_determinant_is_multiplicative(a in square(4), b in square(4), rhs in point(4)) {
        let a = a.add(&DenseMatrix::identity(4).scale(4.0)).unwrap();
        let lu = Lu::factor(&a).unwrap();
        let x = lu.solve(&rhs).unwrap();
        let back = a.matvec(&x).unwrap();
        for (u, v) in back.iter().zip(&rhs) {
            prop_assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
        let ab = a.matmul(&b).unwrap();
        let want = lu.det() * Lu::factor(&b).map(|l| l.det()).unwrap_or(0.0);
        let got = Lu::factor(&ab).map(|l| l.det()).unwrap_or(0.0);
        prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()));
    }

    #[test]
    fn symmetric_eigen_reconstructs(a in square(5)) {
        let s = a.symmetrize();
        let e = sym_eigen(&s).unwrap();
        let lambda = DenseMatrix::from_diag(&e.values);
        let v = &e.vectors;
        let rebuilt = v.matmul(&lambda).unwrap().matmul(&v.transpose()).unwrap();
        prop_assert!(max_diff(&rebuilt, &s) <= 1e-12);
        let vtv = v.transpose().matmul(v).unwrap();
        prop_assert!(max_diff(&vtv, &DenseMatrix::identity(5)) <= 1e-12);
    }

    #[test]
    fn expm_of_negation_is_inverse(a in square(4), t in 0.1f64..1.2) {
        let a = a.scale(t);
        let p = expm(&a).unwrap().matmul(&expm(&a.scale(-1.0)).unwrap()).unwrap();
        prop_assert!(max_diff(&p, &DenseMatrix::identity(4)) <= 1e-9);
    }

    #[test]
    fn midpoint_conserves_quadratic_energy(
        n in 1usize..4, x in prop::collection::vec(-1.0f64..1.0, 6), dt in 0.01f64..0.5
    ) {
        let sys = SystemSpec::harmonic(n);
        let x0 = PhaseState::new(x[..n].to_vec(), x[3..3 + n].to_vec()).unwrap();
        let traj = propagate(&sys, &x0, dt, 50, Method::ImplicitMidpoint).unwrap();
        let h0 = sys.energy(&x0).unwrap();
        for s in &traj.states {
            prop_assert!((sys.energy(s).unwrap() - h0).abs() <= 1e-12 * (1.0 + h0));
        }
    }

    #[test]
    fn predictor_is_symplectic_for_any_coefficients(
        fam in prop::sample::select(vec![KernelFamily::Gaussian, KernelFamily::Imq, KernelFamily::Matern52]),
        centers in prop::collection::vec((point(2), 0usize..2, -0.3f64..0.3), 1..8),
        x in point(2),
    ) {
        let k = KernelSpec::new(fam, 1.0).unwrap();
        let (f, c): (Vec<_>, Vec<_>) = centers
            .into_iter()
            .map(|(p, a, c)| (DerivFunctional::new(p, a).unwrap(), c))
            .unzip();
        let s = Surrogate::from_parts(k, 2, f, c).unwrap();
        let model = PredictorModel::new(s, 0.1).unwrap();
        let x0 = PhaseState::from_flat(&x).unwrap();
        let d = model.symplecticity_defect(&x0).unwrap();
        prop_assert!(d <= 1e-6, "{}", d);
    }

    #[test]
    fn sampler_respects_cap_and_halfspace(seed in 0u64..1000, cap in 1.0f64..20.0) {
        let sys = SystemSpec::pendulum();
        let spec = SamplerSpec::new(SamplerMode::UniformBox {
            bounds: vec![Interval::symmetric(3.0).unwrap(), Interval::symmetric(6.0).unwrap()],
            target_count: 50,
            seed,
        })
        .with_energy_cap(cap, true)
        .with_halfspace(1, Side::NonPositive);
        let states = sample_states(&sys, &spec).unwrap();
        prop_assert!(!states.is_empty());
        for x in &states {
            prop_assert!(sys.energy(x).unwrap() < cap);
            prop_assert!(x.p[0] <= 0.0);
            prop_assert!(x.q[0].abs() <= 3.0 && x.p[0].abs() <= 6.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn csvd_basis_restrict_after_lift_is_identity(z in prop::collection::vec(-1.0f64..1.0, 4)) {
        let sys = SystemSpec::wave(40, 0.3, 1.0).unwrap();
        let grid = sys.wave_grid().unwrap();
        let snaps: Vec<PhaseState> = (1..=2)
            .map(|m| {
                let q = grid.iter().map(|x| (m as f64 * std::f64::consts::PI * x).sin()).collect();
                PhaseState::new(q, vec![0.0; grid.len()]).unwrap()
            })
            .collect();
        let (q, p) = snapshot_matrices(&snaps).unwrap();
        let basis = csvd_basis(&q, &p, 2).unwrap();
        prop_assert!(basis.symplecticity_defect() <= 1e-10);
        let z = PhaseState::from_flat(&z).unwrap();
        let back = basis.restrict(&basis.lift(&z).unwrap()).unwrap();
        for (a, b) in back.to_flat().iter().zip(z.to_flat()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn interpolant_reproduces_its_data(
        fam in family(), data in prop::collection::vec((point(2), 0usize..2, -1.0f64..1.0), 1..10)
    ) {
        let k = KernelSpec::new(fam, 1.0).unwrap();
        let mut f: Vec<DerivFunctional> = Vec::new();
        let mut y = Vec::new();
        for (c, a, v) in data {
            let too_close = f.iter().any(|g| g.coord == a && g.center.iter().zip(&c).all(|(u, w)| (u - w).abs() < 0.05));
            if !too_close {
                f.push(DerivFunctional::new(c, a).unwrap());
                y.push(v);
            }
        }
        let s = fit(&k, &f, &y).unwrap();
        for (fj, yj) in f.iter().zip(&y) {
            let r = s.grad_component(&fj.center, fj.coord).unwrap() - yj;
            prop_assert!(r.abs() <= 1e-7, "{}", r);
        }
    }
}

#[test]
fn symplecticity_error_of_rotation_is_zero() {
    let (s, c) = 0.3f64.sin_cos();
    let r = DenseMatrix::from_rows(&[vec![c, s], vec![-s, c]]).unwrap();
    assert!(symplecticity_error(&r).unwrap() < 1e-15);
    let shear = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert!(symplecticity_error(&shear).unwrap() > 0.5);
}
