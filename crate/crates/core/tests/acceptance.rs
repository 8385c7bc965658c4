//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use symker::dataset::{
    build_hb_dataset, max_bin_spread_1d, max_bin_spread_2d, sample_states, separability_diagnostic, SamplerMode, SamplerSpec,
};
use symker::experiment::{execute, parse_config, reduce_wave, run_experiment, ExperimentConfig, ExperimentKind, ExperimentOutcome, Scale};
use symker::greedy::{train_f_greedy, train_f_greedy_synthetic, verify_block_bound, GreedyConfig, GreedyTrace};
use symker::hb::{DerivFunctional, Surrogate};
use symker::integrators::{propagate, Method};
use symker::kernels::{KernelFamily, KernelSpec};
use symker::predictor::PredictorModel;
use symker::systems::{PhaseState, SystemSpec};

struct Report {
    lines: Vec<(u32, bool, String)>,
}

impl Report {
    fn record(&mut self, n: u32, ok: bool, detail: String) {
        println!("criterion {n:>2} {}: {detail}", if ok { "PASS" } else { "FAIL" });
        self.lines.push((n, ok, detail));
    }
}

fn desk(kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(kind, Scale::Desk);
    cfg.delta_ts = vec![0.1];
    cfg
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

/// Fresh uniform draws from the training box under the training energy cap.
fn random_states(out: &ExperimentOutcome, count: usize, seed: u64) -> Vec<PhaseState> {
    let bounds = match &out.config.sampler.mode {
        SamplerMode::Grid { bounds, .. } | SamplerMode::UniformBox { bounds, .. } => bounds.clone(),
        other => panic!("no box for {other:?}"),
    };
    let mut spec = SamplerSpec::new(SamplerMode::UniformBox { bounds, target_count: count, seed });
    spec.energy_cap = out.config.sampler.energy_cap;
    sample_states(&out.system, &spec).unwrap()
}

fn max_defect(model: &PredictorModel, states: &[PhaseState]) -> f64 {
    states.iter().map(|x| model.symplecticity_defect(x).unwrap_or(f64::INFINITY)).fold(0.0, f64::max)
}

fn under_trained(out: &ExperimentOutcome) -> PredictorModel {
    let run = &out.runs[0];
    let data = build_hb_dataset(&out.working_system, &out.samples, run.delta_t, out.config.micro_dt).unwrap();
    let (s, _) = train_f_greedy(&run.kernel, &data, &GreedyConfig::new(5, 0.0).unwrap()).unwrap();
    PredictorModel::new(s, run.delta_t).unwrap()
}

fn synthetic_trace(seed: u64, max_centers: usize) -> GreedyTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = KernelSpec::gaussian(1.0);
    let mut rand_f = |_| {
        let c = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        DerivFunctional::new(c, rng.gen_range(0..2)).unwrap()
    };
    let u_f: Vec<DerivFunctional> = (0..10).map(&mut rand_f).collect();
    let pool: Vec<DerivFunctional> = (0..190).map(&mut rand_f).collect();
    let u_c: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let u = Surrogate::from_parts(k, 2, u_f.clone(), u_c).unwrap();
    let mut cands = pool;
    for (i, f) in u_f.into_iter().enumerate() {
        cands.insert(i * 19, f);
    }
    train_f_greedy_synthetic(&k, &cands, &u, &GreedyConfig::new(max_centers, 0.0).unwrap()).unwrap().1
}

/// Worst relative mismatch of analytic and central-difference derivatives.
fn fd_mismatch(k: &KernelSpec, x: &[f64], y: &[f64]) -> (f64, f64) {
    let d = x.len();
    let h = 1e-5;
    let g = k.grad2(x, y).unwrap();
    let g_scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut grad_err: f64 = 0.0;
    let mut mixed_err: f64 = 0.0;
    let mixed: Vec<Vec<f64>> = (0..d).map(|a| (0..d).map(|b| k.mixed2(x, y, a, b).unwrap()).collect()).collect();
    let m_scale = mixed.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for b in 0..d {
        let (mut yp, mut ym) = (y.to_vec(), y.to_vec());
        yp[b] += h;
        ym[b] -= h;
        let fd = (k.eval(x, &yp).unwrap() - k.eval(x, &ym).unwrap()) / (2.0 * h);
        grad_err = grad_err.max((fd - g[b]).abs() / g_scale);
    }
    for a in 0..d {
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        xp[a] += h;
        xm[a] -= h;
        let gp = k.grad2(&xp, y).unwrap();
        let gm = k.grad2(&xm, y).unwrap();
        for b in 0..d {
            let fd = (gp[b] - gm[b]) / (2.0 * h);
            mixed_err = mixed_err.max((fd - mixed[a][b]).abs() / m_scale);
        }
    }
    (grad_err, mixed_err)
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn acceptance_criteria() {
    let mut rep = Report { lines: Vec::new() };

    // 1, 2: pendulum scenario A at ΔT = 0.1
    let start = Instant::now();
    let pend = single_threaded(|| execute(&desk(ExperimentKind::Pendulum))).unwrap();
    let elapsed = start.elapsed();
    let run = &pend.runs[0];
    let train = run.trace.training_curve();
    let val: BTreeMap<usize, f64> = run.trace.validation_curve().into_iter().collect();
    let reached = train.iter().find(|(_, e)| *e < 1e-4).map(|(m, _)| *m);
    let worst_ratio = train.iter().filter_map(|(m, e)| val.get(m).map(|v| v / e)).fold(0.0f64, f64::max);
    rep.record(
        1,
        reached.is_some_and(|m| m <= 300) && worst_ratio <= 10.0 && elapsed <= Duration::from_secs(300),
        format!(
            "kernel {} eps {}, E_train < 1e-4 at m = {reached:?}, max E_val/E_train = {worst_ratio:.2}, {:.1} s single-threaded",
            run.kernel.family,
            run.kernel.epsilon,
            elapsed.as_secs_f64()
        ),
    );
    let k_err = run.mean.rel_kernel.last_value().unwrap();
    let b_err = run.mean.rel_baseline.last_value().unwrap();
    rep.record(
        2,
        k_err <= 1e-3 && k_err <= 0.1 * b_err,
        format!("mean e_rel(T = 6): kernel {k_err:.3e}, midpoint {b_err:.3e}, ratio {:.2e}", k_err / b_err),
    );

    // 10 needs the chain run; 3 reuses it
    let chain = execute(&desk(ExperimentKind::Chain)).unwrap();

    // 3
    let pend_states = random_states(&pend, 10, 3);
    let chain_states = random_states(&chain, 10, 4);
    let defects = [
        max_defect(&run.model, &pend_states),
        max_defect(&chain.runs[0].model, &chain_states),
        max_defect(&under_trained(&pend), &pend_states),
        max_defect(&under_trained(&chain), &chain_states),
    ];
    rep.record(
        3,
        defects.iter().all(|d| *d <= 1e-5),
        format!(
            "symplecticity defect: pendulum {:.1e}, chain {:.1e}, m = 5 pendulum {:.1e}, m = 5 chain {:.1e}",
            defects[0], defects[1], defects[2], defects[3]
        ),
    );

    // 4, 5
    let trace = synthetic_trace(11, 50);
    let e = trace.rkhs_errors().unwrap();
    let mut worst: f64 = 0.0;
    for (m, r) in trace.records.iter().enumerate().take(50) {
        let b = r.power_value.unwrap();
        let defect = (e[m + 1] * e[m + 1] - e[m] * e[m] + (r.max_residual / b).powi(2)).abs();
        worst = worst.max(defect / (e[m] * e[m]));
    }
    rep.record(
        4,
        worst <= 1e-8 && trace.records.len() == 50,
        format!("{} greedy steps, max |Δ‖e‖² + a²/b²| / ‖e_m‖² = {worst:.2e}", trace.records.len()),
    );
    let bounds: Vec<_> = [5, 10, 20].iter().map(|&m| (m, verify_block_bound(&trace, m))).collect();
    rep.record(
        5,
        bounds.iter().all(|(_, b)| b.as_ref().is_ok_and(|b| b.holds)),
        bounds
            .iter()
            .map(|(m, b)| match b {
                Ok(b) => format!("m = {m}: {:.3e} <= {:.3e}", b.lhs, b.rhs),
                Err(e) => format!("m = {m}: {e}"),
            })
            .collect::<Vec<_>>()
            .join(", "),
    );

    // 6
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut g_worst, mut m_worst) = (0.0f64, 0.0f64);
    for fam in KernelFamily::ALL {
        for i in 0..100 {
            let d = 2 + i % 3;
            let k = KernelSpec::new(fam, [0.5, 1.0, 2.0][i % 3]).unwrap();
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (g, m) = fd_mismatch(&k, &x, &y);
            g_worst = g_worst.max(g);
            m_worst = m_worst.max(m);
        }
    }
    let mut limit_worst: f64 = 0.0;
    for eps in [0.5, 1.0, 3.0] {
        let k = KernelSpec::new(KernelFamily::Matern32, eps).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            let y: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + 1e-8 * b / n).collect();
            for a in 0..3 {
                for b in 0..3 {
                    let want = if a == b { eps * eps } else { 0.0 };
                    limit_worst = limit_worst.max((k.mixed2(&x, &y, a, b).unwrap() - want).abs() / (eps * eps));
                }
            }
        }
    }
    rep.record(
        6,
        g_worst <= 1e-6 && m_worst <= 1e-4 && limit_worst <= 1e-6,
        format!("grad rel {g_worst:.1e}, mixed rel {m_worst:.1e}, Matern-3/2 limit at r = 1e-8 {limit_worst:.1e}"),
    );

    // 7
    let pend_bound = pend.system.step_size_bound(&pend.samples, 6.0).unwrap();
    let chain_bound = chain.system.step_size_bound(&chain.samples, 10.0).unwrap();
    let three = |v: f64| format!("{v:.2e}");
    rep.record(
        7,
        three(pend_bound) == "7.07e-2" && three(chain_bound).parse::<f64>().unwrap() >= 9.90e-2,
        format!("pendulum {pend_bound:.4e}, chain {chain_bound:.4e}"),
    );

    // 8
    let mut reso_worst: f64 = 0.0;
    let mut flags_ok = true;
    for n in [1, 3] {
        let sys = SystemSpec::harmonic(n);
        for (dt, resonant) in [(0.0, false), (std::f64::consts::FRAC_PI_4, false), (std::f64::consts::FRAC_PI_2, true)] {
            let r = sys.resonance_check(dt).unwrap();
            reso_worst = reso_worst.max((r.det_d - dt.cos().powi(n as i32)).abs());
            flags_ok &= r.resonant == resonant;
        }
    }
    rep.record(8, reso_worst <= 1e-8 && flags_ok, format!("max |det D - cos^n| = {reso_worst:.1e}, resonance flags correct: {flags_ok}"));

    // 9
    let wave_cfg = desk(ExperimentKind::Wave);
    let red = wave_cfg.reduction.clone().unwrap();
    let (basis, reduced) = reduce_wave(&wave_cfg.system.build().unwrap(), red.snapshot_modes, red.reduced_n).unwrap();
    let wave = execute(&wave_cfg).unwrap();
    let x0 = &wave.test_states[0];
    let traj = propagate(&reduced, x0, 0.1, 100, Method::ImplicitMidpoint).unwrap();
    let h0 = reduced.energy(x0).unwrap();
    let drift = traj.states.iter().map(|x| (reduced.energy(x).unwrap() - h0).abs()).fold(0.0, f64::max);
    let wave_err = wave.runs[0].mean.rel_kernel.max_value();
    rep.record(
        9,
        basis.symplecticity_defect() <= 1e-10 && drift <= 1e-9 && wave_err <= 1e-3,
        format!(
            "basis defect {:.1e}, reduced midpoint energy drift {drift:.1e}, kernel mean e_rel max over T = 6 {wave_err:.3e} ({} {})",
            basis.symplecticity_defect(),
            wave.runs[0].kernel.family,
            wave.runs[0].kernel.epsilon
        ),
    );

    // 10
    let crun = &chain.runs[0];
    let c_train = crun.trace.final_max_residual;
    let ck = crun.mean.rel_kernel.last_value().unwrap();
    let cb = crun.mean.rel_baseline.last_value().unwrap();
    rep.record(
        10,
        c_train <= 1e-3 && ck <= 0.3 * cb,
        format!(
            "kernel {} eps {} with {} centers: E_train {c_train:.3e}, mean e_rel(T = 10) kernel {ck:.3e}, midpoint {cb:.3e}",
            crun.kernel.family,
            crun.kernel.epsilon,
            crun.model.surrogate.len()
        ),
    );

    // 11
    let data = build_hb_dataset(&pend.system, &pend.samples, 0.1, pend.config.micro_dt).unwrap();
    let tables = separability_diagnostic(&data).unwrap();
    let spread_a = max_bin_spread_1d(&tables.position_rate, 1e-3).max(max_bin_spread_1d(&tables.momentum_rate, 1e-3));
    let spread_b = max_bin_spread_2d(&tables.mixed, 1e-3);
    rep.record(11, spread_a > 1e-2 && spread_b <= 1e-4, format!("1-D bin spread {spread_a:.3e}, 2-D bin spread {spread_b:.3e}"));

    // 12
    let small = "delta_ts = [0.1]\n[sampler.mode]\nkind = \"grid\"\ncounts = [20, 20]\nbounds = [{ lower = -3.141592653589793, upper = 3.141592653589793 }, { lower = -6.264183905346329, upper = 6.264183905346329 }]\n[greedy]\nmax_centers = 40\nresidual_tolerance = 1e-10\n[selection]\nfamilies = [\"imq\", \"gaussian\"]\nepsilons = [0.5, 1.0]\n";
    let cfg = parse_config(Some(small), Some(ExperimentKind::Pendulum), Some(Scale::Desk)).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg, a.path()).unwrap();
    run_experiment(&cfg, b.path()).unwrap();
    let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
    rep.record(12, !fa.is_empty() && fa == fb, format!("{} CSV files compared, identical: {}", fa.len(), fa == fb));

    let failed: Vec<u32> = rep.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    assert_eq!(rep.lines.len(), 12);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
