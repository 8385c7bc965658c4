use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use symker::dataset::{
    build_hb_dataset, load_dataset, max_bin_spread_1d, max_bin_spread_2d, sample_states, save_dataset, separability_diagnostic,
    split_train_validation, DatasetMetadata,
};
use symker::experiment::{self, load_config, select_model, ExperimentConfig, ExperimentKind, ModelFile, Scale};
use symker::greedy::train_f_greedy_with_validation;
use symker::hb::HbDataset;
use symker::predictor::PredictorModel;
use symker::systems::PhaseState;
use symker::Error;

#[derive(Parser)]
#[command(name = "symker", version, about = "Symplectic kernel surrogates for Hamiltonian flow maps")]
struct Cli {
    /// TOML file overlaying the built-in preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Preset size.
    #[arg(long, global = true, value_enum)]
    scale: Option<ScaleArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Pendulum,
    Chain,
    Wave,
}

impl From<KindArg> for ExperimentKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Pendulum => ExperimentKind::Pendulum,
            KindArg::Chain => ExperimentKind::Chain,
            KindArg::Wave => ExperimentKind::Wave,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Select a kernel and train a surrogate per macro step.
    Train {
        /// Experiment preset (may also come from the config file).
        #[arg(long, value_enum)]
        experiment: Option<KindArg>,
        /// Train on an existing dataset CSV (with its JSON sidecar) instead of sampling.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Roll a trained model forward from one state.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated `q_1..q_n,p_1..p_n`.
        #[arg(long, allow_hyphen_values = true)]
        state: String,
        /// Number of macro steps.
        #[arg(long, default_value_t = 1)]
        steps: usize,
    },
    /// Run one of the benchmark experiments end to end.
    Experiment {
        #[arg(value_enum)]
        kind: KindArg,
    },
    /// Emit the separable and mixed-input views of one-degree-of-freedom training data.
    DiagnoseSeparability {
        #[arg(long, value_enum, default_value = "pendulum")]
        experiment: KindArg,
    },
    /// Report the step-size bound, resonance checks and, given a model, its contraction margin.
    CheckBounds {
        #[arg(long, value_enum)]
        experiment: Option<KindArg>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn config(cli: &Cli, kind: Option<KindArg>) -> symker::Result<ExperimentConfig> {
    let scale = cli.scale.map(|s| match s {
        ScaleArg::Desk => Scale::Desk,
        ScaleArg::Paper => Scale::Paper,
    });
    let mut cfg = load_config(cli.config.as_deref(), kind.map(Into::into), scale)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig, default: &str) -> PathBuf {
    cli.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out").join(default))
}

fn run(cli: Cli) -> symker::Result<()> {
    match &cli.command {
        Command::Experiment { kind } => {
            let cfg = config(&cli, Some(*kind))?;
            let out = out_dir(&cli, &cfg, cfg.experiment.name());
            let outcome = experiment::run_experiment(&cfg, &out)?;
            for r in &outcome.runs {
                println!(
                    "ΔT = {}: kernel {} ε = {}, {} centers, E_train = {:.3e}, final mean e_rel kernel {:.3e} vs midpoint {:.3e}",
                    r.delta_t,
                    r.kernel.family,
                    r.kernel.epsilon,
                    r.model.surrogate.len(),
                    r.trace.final_max_residual,
                    r.mean.rel_kernel.last_value().unwrap_or(f64::NAN),
                    r.mean.rel_baseline.last_value().unwrap_or(f64::NAN),
                );
            }
            println!("artifacts in {}", out.display());
            Ok(())
        }
        Command::Train { experiment, data } => train(&cli, *experiment, data.as_deref()),
        Command::Predict { model, state, steps } => predict(&cli, model, state, *steps),
        Command::DiagnoseSeparability { experiment } => diagnose(&cli, *experiment),
        Command::CheckBounds { experiment, model } => check_bounds(&cli, *experiment, model.as_deref()),
    }
}

fn train_one(cfg: &ExperimentConfig, data: &HbDataset, out: &Path, tag: &str) -> symker::Result<()> {
    let (_, _, split_seed) = cfg.seeds();
    let (train, val) = split_train_validation(data, cfg.selection.validation_fraction, split_seed)?;
    let (kernel, _, table) = select_model(&cfg.selection, cfg.m_star(), &train, &val)?;
    let (s, trace) = train_f_greedy_with_validation(&kernel, &train, &val, &cfg.greedy)?;
    let mut model = PredictorModel::new(s, data.delta_t)?;
    model.settings = cfg.predictor;
    let basis = match &cfg.reduction {
        Some(r) => Some(experiment::reduce_wave(&cfg.system.build()?, r.snapshot_modes, r.reduced_n)?.0),
        None => None,
    };
    ModelFile::new(&model, basis).save(&out.join(format!("model_{tag}.json")))?;
    trace.save_csv(&out.join(format!("greedy_trace_{tag}.csv")))?;
    let f = std::fs::File::create(out.join(format!("selection_table_{tag}.csv")))?;
    experiment::selection::write_selection_csv(&[(data.delta_t, table)], std::io::BufWriter::new(f))?;
    println!(
        "{tag}: kernel {} ε = {}, {} centers, E_train = {:.3e}",
        kernel.family,
        kernel.epsilon,
        model.surrogate.len(),
        trace.final_max_residual
    );
    Ok(())
}

fn train(cli: &Cli, kind: Option<KindArg>, data: Option<&Path>) -> symker::Result<()> {
    let mut cfg = config(cli, kind)?;
    cfg.apply_seed();
    let out = out_dir(cli, &cfg, "train");
    std::fs::create_dir_all(&out)?;
    if let Some(path) = data {
        let (d, _) = load_dataset(path)?;
        return train_one(&cfg, &d, &out, &format!("dt{}", d.delta_t));
    }
    let sys = cfg.system.build()?;
    let working = match &cfg.reduction {
        Some(r) => experiment::reduce_wave(&sys, r.snapshot_modes, r.reduced_n)?.1,
        None => sys,
    };
    let states = sample_states(&working, &cfg.sampler)?;
    for &dt in &cfg.delta_ts {
        let mut d = build_hb_dataset(&working, &states, dt, cfg.micro_dt)?;
        d.scenario = cfg.scenario.clone();
        let tag = format!("dt{dt}");
        let meta = DatasetMetadata {
            system: d.system.clone(),
            scenario: d.scenario.clone(),
            delta_t: dt,
            micro_dt: cfg.micro_dt,
            samples: d.len(),
            sampler: Some(cfg.sampler.clone()),
            seed: Some(cfg.seed),
        };
        save_dataset(&d, &meta, &out, &format!("dataset_{tag}"))?;
        train_one(&cfg, &d, &out, &tag)?;
    }
    Ok(())
}

fn parse_state(s: &str) -> symker::Result<PhaseState> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad state entry '{t}': {e}"))))
        .collect::<symker::Result<_>>()?;
    PhaseState::from_flat(&vals)
}

fn predict(cli: &Cli, model_path: &Path, state: &str, steps: usize) -> symker::Result<()> {
    let file = ModelFile::load(model_path)?;
    let model = file.predictor()?;
    let x0 = file.to_model_coords(&parse_state(state)?)?;
    let traj = model.rollout(&x0, steps)?;
    let traj = match &file.basis {
        Some(_) => {
            let mut lifted = traj.clone();
            lifted.states = traj.states.iter().map(|z| file.from_model_coords(z)).collect::<symker::Result<_>>()?;
            lifted
        }
        None => traj,
    };
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            traj.save_csv(&dir.join("prediction.csv"))
        }
        None => traj.write_csv(std::io::stdout().lock()),
    }
}

fn diagnose(cli: &Cli, kind: KindArg) -> symker::Result<()> {
    let mut cfg = config(cli, Some(kind))?;
    cfg.apply_seed();
    let sys = cfg.system.build()?;
    if sys.dof() != 1 {
        return Err(Error::NotOneDof(sys.dof()));
    }
    let states = sample_states(&sys, &cfg.sampler)?;
    let dt = cfg.delta_ts[0];
    let d = build_hb_dataset(&sys, &states, dt, cfg.micro_dt)?;
    let t = separability_diagnostic(&d)?;
    let out = out_dir(cli, &cfg, "separability");
    std::fs::create_dir_all(&out)?;
    t.write_separable_csv(std::io::BufWriter::new(std::fs::File::create(out.join("separability_a.csv"))?))?;
    t.write_mixed_csv(std::io::BufWriter::new(std::fs::File::create(out.join("separability_b.csv"))?))?;
    let a = max_bin_spread_1d(&t.position_rate, 1e-3).max(max_bin_spread_1d(&t.momentum_rate, 1e-3));
    let b = max_bin_spread_2d(&t.mixed, 1e-3);
    println!("ΔT = {dt}, {} samples", d.len());
    println!("separable view: largest output spread within an input bin of width 1e-3: {a:.3e}");
    println!("mixed view: largest output spread within a 2-D bin of width 1e-3: {b:.3e}");
    println!("tables in {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct BoundsReport {
    experiment: String,
    horizon: f64,
    step_size_bound: f64,
    resonance: Vec<symker::systems::ResonanceReport>,
    contraction_margin: Option<f64>,
}

fn check_bounds(cli: &Cli, kind: Option<KindArg>, model: Option<&Path>) -> symker::Result<()> {
    let mut cfg = config(cli, kind)?;
    cfg.apply_seed();
    let sys = cfg.system.build()?;
    let working = match &cfg.reduction {
        Some(r) => experiment::reduce_wave(&sys, r.snapshot_modes, r.reduced_n)?.1,
        None => sys,
    };
    let states = sample_states(&working, &cfg.sampler)?;
    let bound = working.step_size_bound(&states, cfg.test.horizon)?;
    let resonance = match working.quadratic_matrix() {
        Some(_) => cfg.delta_ts.iter().map(|&dt| working.resonance_check(dt)).collect::<symker::Result<_>>()?,
        None => Vec::new(),
    };
    let contraction_margin = match model {
        Some(path) => {
            let m = ModelFile::load(path)?.predictor()?;
            Some(m.contraction_margin(&states)?)
        }
        None => None,
    };
    let report = BoundsReport {
        experiment: cfg.experiment.name().to_string(),
        horizon: cfg.test.horizon,
        step_size_bound: bound,
        resonance,
        contraction_margin,
    };
    let text = serde_json::to_string_pretty(&report)? + "\n";
    print!("{text}");
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("check_bounds.json"), text)?;
    }
    Ok(())
}
