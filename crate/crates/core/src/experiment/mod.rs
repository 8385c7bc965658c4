//! End-to-end experiments: sample, build data, select a kernel, train to
//! budget, roll out against the macro-step midpoint baseline and the micro
//! reference, and write CSV, JSON and SVG artifacts.

pub mod config;
pub mod metrics;
pub mod model_file;
pub mod plot;
pub mod selection;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dataset::{build_hb_dataset, sample_states, sine_mode_snapshots, split_train_validation, test_states};
use crate::error::{Error, Result};
use crate::greedy::{train_f_greedy_with_validation, GreedyTrace};
use crate::integrators::{propagate, reference_trajectory, step_count, Method, Trajectory};
use crate::kernels::KernelSpec;
use crate::mor::{csvd_basis, reduce_quadratic, snapshot_matrices, ReducedBasis};
use crate::predictor::PredictorModel;
use crate::systems::{PhaseState, ResonanceReport, SystemSpec};

pub use config::{load_config, parse_config, ExperimentConfig, ExperimentKind, Scale};
pub use metrics::{compute_metrics, MetricSeries, TrajectoryMetrics};
pub use model_file::ModelFile;
pub use plot::{emit_plot, render_svg, AxisScale, Line, PlotSpec};
pub use selection::{select_model, SelectionRow};

/// Results for one macro step.
#[derive(Debug, Clone)]
pub struct DeltaTRun {
    pub delta_t: f64,
    pub kernel: KernelSpec,
    pub selection: Vec<SelectionRow>,
    pub trace: GreedyTrace,
    pub model: PredictorModel,
    pub train_size: usize,
    pub validation_size: usize,
    pub per_ic: Vec<TrajectoryMetrics>,
    pub mean: TrajectoryMetrics,
    /// Predictor, baseline and reference for the first test state.
    pub example: [Trajectory; 3],
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub system: SystemSpec,
    /// The system the surrogate is trained on: the reduced one for the wave
    /// experiment, `system` otherwise.
    pub working_system: SystemSpec,
    pub basis: Option<ReducedBasis>,
    pub samples: Vec<PhaseState>,
    pub test_states: Vec<PhaseState>,
    pub step_bound: f64,
    pub resonance: Vec<ResonanceReport>,
    pub runs: Vec<DeltaTRun>,
}

/// Symplectic basis from the `B²` sine-mode snapshots and the reduced system.
pub fn reduce_wave(sys: &SystemSpec, snapshot_modes: usize, reduced_n: usize) -> Result<(ReducedBasis, SystemSpec)> {
    let snaps = sine_mode_snapshots(sys, snapshot_modes)?;
    let (q, p) = snapshot_matrices(&snaps)?;
    let basis = csvd_basis(&q, &p, reduced_n)?;
    let reduced = reduce_quadratic(&basis, sys)?;
    Ok((basis, reduced))
}

struct Setup {
    system: SystemSpec,
    working: SystemSpec,
    basis: Option<ReducedBasis>,
    samples: Vec<PhaseState>,
    tests: Vec<PhaseState>,
    step_bound: f64,
    resonance: Vec<ResonanceReport>,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let system = cfg.system.build()?;
    let (basis, working) = match &cfg.reduction {
        Some(r) => {
            let (b, red) = reduce_wave(&system, r.snapshot_modes, r.reduced_n)?;
            (Some(b), red)
        }
        None => (None, system.clone()),
    };
    let samples = sample_states(&working, &cfg.sampler)?;
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let full_tests = test_states(&system, &cfg.test.initial_conditions)?;
    let tests = match &basis {
        Some(b) => full_tests.iter().map(|x| b.restrict(x)).collect::<Result<_>>()?,
        None => full_tests,
    };
    let step_bound = working.step_size_bound(&samples, cfg.test.horizon)?;
    let resonance = match working.quadratic_matrix() {
        Some(_) => cfg.delta_ts.iter().map(|&dt| working.resonance_check(dt)).collect::<Result<_>>()?,
        None => Vec::new(),
    };
    Ok(Setup { system, working, basis, samples, tests, step_bound, resonance })
}

#[cfg(feature = "parallel")]
fn map_tests<T: Send>(xs: &[PhaseState], f: impl Fn(&PhaseState) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    use rayon::prelude::*;
    xs.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_tests<T>(xs: &[PhaseState], f: impl Fn(&PhaseState) -> Result<T>) -> Result<Vec<T>> {
    xs.iter().map(f).collect()
}

fn run_delta_t(cfg: &ExperimentConfig, s: &Setup, delta_t: f64) -> Result<DeltaTRun> {
    let (_, _, split_seed) = cfg.seeds();
    let mut data = build_hb_dataset(&s.working, &s.samples, delta_t, cfg.micro_dt)?;
    data.scenario = cfg.scenario.clone();
    let (train, val) = split_train_validation(&data, cfg.selection.validation_fraction, split_seed)?;
    let (kernel, _, table) = select_model(&cfg.selection, cfg.m_star(), &train, &val)?;
    let (surrogate, trace) = train_f_greedy_with_validation(&kernel, &train, &val, &cfg.greedy)?;
    let mut model = PredictorModel::new(surrogate, delta_t)?;
    model.settings = cfg.predictor;
    let steps = step_count(cfg.test.horizon, delta_t)?;
    let trajectories = map_tests(&s.tests, |x0| {
        let pred = model.rollout(x0, steps)?;
        let base = propagate(&s.working, x0, delta_t, steps, Method::ImplicitMidpoint)?;
        let reference = reference_trajectory(&s.working, x0, delta_t, cfg.micro_dt, steps)?;
        let m = compute_metrics(&pred, &base, &reference, &s.working)?;
        Ok((m, [pred, base, reference]))
    })?;
    let per_ic: Vec<TrajectoryMetrics> = trajectories.iter().map(|t| t.0.clone()).collect();
    let mean = TrajectoryMetrics::mean(&per_ic)?;
    let example = trajectories.into_iter().next().ok_or(Error::EmptySample)?.1;
    Ok(DeltaTRun {
        delta_t,
        kernel,
        selection: table,
        trace,
        model,
        train_size: train.len(),
        validation_size: val.len(),
        per_ic,
        mean,
        example,
    })
}

/// Runs the whole pipeline in memory without writing anything.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_with(cfg, |_| Ok(()))
}

fn run_with(cfg: &ExperimentConfig, mut on_run: impl FnMut(&DeltaTRun) -> Result<()>) -> Result<ExperimentOutcome> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    cfg.apply_seed();
    let s = setup(&cfg)?;
    let mut runs = Vec::with_capacity(cfg.delta_ts.len());
    for &dt in &cfg.delta_ts {
        let run = run_delta_t(&cfg, &s, dt)?;
        on_run(&run)?;
        runs.push(run);
    }
    Ok(ExperimentOutcome {
        config: cfg,
        system: s.system,
        working_system: s.working,
        basis: s.basis,
        samples: s.samples,
        test_states: s.tests,
        step_bound: s.step_bound,
        resonance: s.resonance,
        runs,
    })
}

/// Tracks written files for the MANIFEST.
struct Manifest {
    dir: PathBuf,
    files: Vec<String>,
}

impl Manifest {
    fn create(&mut self, name: &str) -> Result<std::io::BufWriter<std::fs::File>> {
        self.files.push(name.to_string());
        Ok(std::io::BufWriter::new(std::fs::File::create(self.dir.join(name))?))
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        self.files.push(name.to_string());
        std::fs::write(self.dir.join(name), contents)?;
        Ok(())
    }

    fn finish(&self, cfg: &ExperimentConfig, failure: Option<&Error>) -> Result<()> {
        let mut s = format!("experiment: {}\nscenario: {}\nseed: {}\n", cfg.experiment.name(), cfg.scenario, cfg.seed);
        match failure {
            None => s.push_str("status: complete\n"),
            Some(e) => s.push_str(&format!("status: failed\nerror: {e}\n")),
        }
        s.push_str("files:\n");
        for f in &self.files {
            s.push_str(&format!("  {f}\n"));
        }
        std::fs::write(self.dir.join("MANIFEST"), s)?;
        Ok(())
    }
}

fn tag(dt: f64) -> String {
    format!("dt{dt}")
}

fn write_run(m: &mut Manifest, run: &DeltaTRun, basis: Option<&ReducedBasis>) -> Result<()> {
    let t = tag(run.delta_t);
    run.trace.write_csv(m.create(&format!("greedy_trace_{t}.csv"))?)?;
    ModelFile::new(&run.model, basis.cloned()).save(&m.dir.join(format!("model_{t}.json")))?;
    m.files.push(format!("model_{t}.json"));
    for (traj, label) in run.example.iter().zip(["kernel", "midpoint", "reference"]) {
        traj.write_csv(m.create(&format!("trajectory_{t}_{label}.csv"))?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RunSummary {
    delta_t: f64,
    kernel: KernelSpec,
    centers: usize,
    train_size: usize,
    validation_size: usize,
    final_train_error: f64,
    final_validation_error: Option<f64>,
    stop_reason: String,
    kernel_final_mean_rel_error: Option<f64>,
    midpoint_final_mean_rel_error: Option<f64>,
    kernel_max_mean_rel_error: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: &'a str,
    scenario: &'a str,
    samples: usize,
    step_size_bound: f64,
    resonance: Vec<(f64, f64, bool)>,
    basis_symplecticity_defect: Option<f64>,
    runs: Vec<RunSummary>,
}

fn write_aggregates(m: &mut Manifest, out: &ExperimentOutcome) -> Result<()> {
    let runs = &out.runs;
    let tables: Vec<(f64, Vec<SelectionRow>)> = runs.iter().map(|r| (r.delta_t, r.selection.clone())).collect();
    selection::write_selection_csv(&tables, m.create("selection_table.csv")?)?;

    let mut w = m.create("convergence.csv")?;
    writeln!(w, "delta_t,m,train_error,validation_error")?;
    for r in runs {
        let val = r.trace.validation_curve();
        for (k, (mm, e)) in r.trace.training_curve().into_iter().enumerate() {
            let v = val.get(k).map(|p| format!("{:e}", p.1)).unwrap_or_default();
            writeln!(w, "{},{mm},{e:e},{v}", r.delta_t)?;
        }
    }
    w.flush()?;
    drop(w);

    let refs: Vec<(f64, &TrajectoryMetrics)> = runs.iter().map(|r| (r.delta_t, &r.mean)).collect();
    metrics::write_rel_error_csv(&refs, m.create("rel_error.csv")?)?;
    metrics::write_energy_error_csv(&refs, m.create("energy_error.csv")?)?;

    let mut conv = Vec::new();
    let mut rel = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let t = format!("ΔT={}", r.delta_t);
        let curve = |c: Vec<(usize, f64)>| c.into_iter().map(|(m, e)| (m as f64, e)).collect::<Vec<_>>();
        conv.push(Line { series: MetricSeries::new(format!("train {t}"), curve(r.trace.training_curve()))?, dashed: false, color: i });
        let val = r.trace.validation_curve();
        if !val.is_empty() {
            conv.push(Line { series: MetricSeries::new(format!("val {t}"), curve(val))?, dashed: true, color: i });
        }
        rel.push(Line { series: MetricSeries::new(format!("kernel {t}"), r.mean.rel_kernel.points.clone())?, dashed: false, color: i });
        rel.push(Line { series: MetricSeries::new(format!("midpoint {t}"), r.mean.rel_baseline.points.clone())?, dashed: true, color: i });
    }
    let name = out.config.experiment.name();
    let conv_spec = PlotSpec {
        title: format!("{name}: f-greedy convergence"),
        x_label: "centers m".into(),
        y_label: "max gradient residual E_X(m)".into(),
        x_scale: AxisScale::Log,
        y_scale: AxisScale::Log,
    };
    m.write("convergence.svg", &render_svg(&conv_spec, &conv)?)?;
    let rel_spec = PlotSpec {
        title: format!("{name}: mean relative error"),
        x_label: "t".into(),
        y_label: "e_rel(t)".into(),
        x_scale: AxisScale::Linear,
        y_scale: AxisScale::Log,
    };
    m.write("rel_error.svg", &render_svg(&rel_spec, &rel)?)?;

    let summary = Summary {
        experiment: name,
        scenario: &out.config.scenario,
        samples: out.samples.len(),
        step_size_bound: out.step_bound,
        resonance: out.resonance.iter().map(|r| (r.delta_t, r.det_d, r.resonant)).collect(),
        basis_symplecticity_defect: out.basis.as_ref().map(ReducedBasis::symplecticity_defect),
        runs: runs
            .iter()
            .map(|r| RunSummary {
                delta_t: r.delta_t,
                kernel: r.kernel,
                centers: r.model.surrogate.len(),
                train_size: r.train_size,
                validation_size: r.validation_size,
                final_train_error: r.trace.final_max_residual,
                final_validation_error: r.trace.final_validation_error,
                stop_reason: format!("{:?}", r.trace.stop_reason),
                kernel_final_mean_rel_error: r.mean.rel_kernel.last_value(),
                midpoint_final_mean_rel_error: r.mean.rel_baseline.last_value(),
                kernel_max_mean_rel_error: r.mean.rel_kernel.max_value(),
            })
            .collect(),
    };
    m.write("summary.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    Ok(())
}

/// Executes the experiment and writes its artifacts into `out`. A MANIFEST
/// listing the files and the completion state is written even on failure.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome> {
    std::fs::create_dir_all(out)?;
    let mut manifest = Manifest { dir: out.to_path_buf(), files: Vec::new() };
    let result = (|| {
        cfg.validate()?;
        let mut resolved = cfg.clone();
        resolved.apply_seed();
        manifest.write("config.toml", &resolved.to_toml()?)?;
        let basis = match &cfg.reduction {
            Some(r) => Some(reduce_wave(&cfg.system.build()?, r.snapshot_modes, r.reduced_n)?.0),
            None => None,
        };
        if let Some(b) = &basis {
            manifest.write("basis.json", &(serde_json::to_string_pretty(b)? + "\n"))?;
        }
        let outcome = run_with(cfg, |run| write_run(&mut manifest, run, basis.as_ref()))?;
        write_aggregates(&mut manifest, &outcome)?;
        Ok(outcome)
    })();
    manifest.finish(cfg, result.as_ref().err())?;
    result
}
